// Rewrites tests/golden/*.png from tests/fixtures/*.uil at 108x240.
//
//   regen_goldens [fixtures_dir] [golden_dir]

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <vector>

#include "golden.hpp"
#include "uisim/codec.hpp"
#include "uisim/image.hpp"
#include "uisim/layout.hpp"
#include "uisim/raster.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const fs::path fixtures = argc > 1 ? fs::path(argv[1]) : fs::path(UISIM_TEST_DIR) / "fixtures";
  const fs::path golden = argc > 2 ? fs::path(argv[2]) : fs::path(UISIM_TEST_DIR) / "golden";
  fs::create_directories(golden);
  for (const auto& g : uisim::testing::golden_cases(fixtures, golden)) {
    const auto layout = uisim::parse_layout(uisim::read_file_text(g.layout_path));
    const auto image = uisim::render(layout, uisim::theme_by_name(g.theme), g.width, g.height);
    uisim::save_png(image, g.golden_path);
    std::cout << g.golden_path.string() << "\n";
  }
  return 0;
}
