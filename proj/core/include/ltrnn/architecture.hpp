#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ltrnn {

struct LayerShape {
  std::size_t out = 0;  // rows of the weight matrix (m)
  std::size_t in = 0;   // columns of the weight matrix (k)

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

// Fully connected ranker: input_dim features feeding layers of the given widths.
// The last width is the model output and is 1 for a scoring network.
struct FfnArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;

  std::size_t depth() const noexcept { return widths.size(); }
  std::vector<LayerShape> layer_shapes() const;
  void validate() const;

  // "400x200x200x100" (also accepts '*' and unicode times). With
  // append_output, a scalar output layer is added unless the last width is 1.
  static FfnArchitecture parse(const std::string& text, std::size_t input_dim, bool append_output = true);
  // Hidden widths joined by 'x', omitting a trailing scalar output layer.
  std::string to_string() const;

  friend bool operator==(const FfnArchitecture&, const FfnArchitecture&) = default;
};

}  // namespace ltrnn
