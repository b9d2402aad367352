#pragma once

#include <string>
#include <vector>

#include "lfsamba/tensor.hpp"

namespace lfsamba {

/// Scribble label values.
enum ScribbleLabel : int { kUnlabeled = 0, kForeground = 1, kBackground = 2 };

struct FocalStack {
  std::string id;
  Tensor all_focus;            // [3,H,W] in [0,1]
  std::vector<Tensor> slices;  // K × [3,H,W], focus-depth order
  Tensor gt;                   // [H,W] in {0,1}; undefined when absent
  Tensor scribble;             // [H,W] in {0,1,2}; undefined when absent

  std::size_t height() const { return all_focus.dim(1); }
  std::size_t width() const { return all_focus.dim(2); }
};

}  // namespace lfsamba
