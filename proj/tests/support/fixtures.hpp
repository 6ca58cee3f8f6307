#pragma once

#include <string>

#include "dexforge/hand.hpp"

namespace dexforge::testing {

std::string fixture_path(const std::string& name);

// Cached copy of the checked-in three-digit test hand.
const HandModelSpec& test_hand();

}  // namespace dexforge::testing
