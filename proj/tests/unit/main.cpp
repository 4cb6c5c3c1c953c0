#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "einv/log.hpp"
#include "einv/rng.hpp"

int main(int argc, char** argv) {
  einv::set_log_level(einv::LogLevel::quiet);
  einv::seed_all(0, true);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
