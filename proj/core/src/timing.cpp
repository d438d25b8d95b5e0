#include "ltrnn/timing.hpp"

#include <fstream>
#include <string>

namespace ltrnn {

std::string machine_descriptor() {
  std::string cpu = "unknown-cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        cpu.erase(0, cpu.find_first_not_of(" \t"));
      }
      break;
    }
  }
#if defined(__AVX512F__)
  const char* isa = "avx512";
#elif defined(__AVX2__) && defined(__FMA__)
  const char* isa = "avx2-fma";
#elif defined(__AVX__)
  const char* isa = "avx";
#elif defined(__SSE2__)
  const char* isa = "sse2";
#else
  const char* isa = "scalar";
#endif
  return cpu + " | " + isa + " | 1 thread";
}

}  // namespace ltrnn
