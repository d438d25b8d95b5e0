#include "ltrnn/architecture.hpp"

#include <charconv>

#include "ltrnn/error.hpp"

namespace ltrnn {

std::vector<LayerShape> FfnArchitecture::layer_shapes() const {
  std::vector<LayerShape> shapes;
  shapes.reserve(widths.size());
  std::size_t prev = input_dim;
  for (const auto w : widths) {
    shapes.push_back({w, prev});
    prev = w;
  }
  return shapes;
}

void FfnArchitecture::validate() const {
  if (input_dim == 0) throw ValidationError("architecture needs at least one input feature");
  if (widths.empty()) throw ValidationError("architecture needs at least one layer");
  for (const auto w : widths)
    if (w == 0) throw ValidationError("layer widths must be >= 1");
}

FfnArchitecture FfnArchitecture::parse(const std::string& text, std::size_t input_dim, bool append_output) {
  // Normalise separators: 'x', 'X', '*', U+00D7.
  std::string s;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == 0xC3 && i + 1 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x97) {
      s += 'x';
      ++i;
    } else if (c == 'X' || c == '*') {
      s += 'x';
    } else if (c != ' ') {
      s += static_cast<char>(c);
    }
  }
  FfnArchitecture arch;
  arch.input_dim = input_dim;
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    const auto next = s.find('x', pos);
    const std::string tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    std::size_t w = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), w);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
      throw ValidationError("bad architecture '" + text + "'");
    arch.widths.push_back(w);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (append_output && !arch.widths.empty() && arch.widths.back() != 1) arch.widths.push_back(1);
  arch.validate();
  return arch;
}

std::string FfnArchitecture::to_string() const {
  std::string out;
  const std::size_t n = (!widths.empty() && widths.back() == 1 && widths.size() > 1) ? widths.size() - 1 : widths.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += 'x';
    out += std::to_string(widths[i]);
  }
  return out;
}

}  // namespace ltrnn
