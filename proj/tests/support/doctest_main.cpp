#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

namespace testsupport {
std::string g_gridedge_bin;
const std::string& gridedge_bin() { return g_gridedge_bin; }
}  // namespace testsupport

int main(int argc, char** argv) {
  std::vector<char*> passthrough;
  const char* prefix = "--gridedge-bin=";
  for (int i = 0; i < argc; ++i) {
    if (std::strncmp(argv[i], prefix, std::strlen(prefix)) == 0) {
      testsupport::g_gridedge_bin = argv[i] + std::strlen(prefix);
    } else {
      passthrough.push_back(argv[i]);
    }
  }
  doctest::Context context(static_cast<int>(passthrough.size()), passthrough.data());
  return context.run();
}
