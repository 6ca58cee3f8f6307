#include "support/fixtures.hpp"

#include <fstream>

#include "dexforge/errors.hpp"

namespace dexforge::testing {

std::string fixture_path(const std::string& name) {
    return std::string(DEXFORGE_FIXTURE_DIR) + "/" + name;
}

const HandModelSpec& test_hand() {
    static const HandModelSpec model = [] {
        std::ifstream in(fixture_path("test_hand.json"));
        if (!in) throw IoError("missing fixture test_hand.json");
        return hand_from_stream(in);
    }();
    return model;
}

}  // namespace dexforge::testing
