#pragma once

/// @file diano.hpp
/// @brief Umbrella header.

#include "diano/cli.hpp"
