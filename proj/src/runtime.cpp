#include "shades/runtime.hpp"

#include <cstdlib>
#include <string>

#include <torch/torch.h>

namespace shades {

bool deterministic_mode() {
  const char* value = std::getenv("SHADES_DETERMINISTIC");
  return value != nullptr && std::string(value) == "1";
}

void apply_execution_mode() {
  if (!deterministic_mode()) return;
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

}  // namespace shades
