#pragma once

// libtorch's logging header defines CHECK, CHECK_EQ and friends; doctest
// needs those names, so torch comes first and its macros are dropped.
#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LE
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_GT
#undef CHECK_NOTNULL

#include <doctest.h>
