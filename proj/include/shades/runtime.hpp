#pragma once

namespace shades {

/// True when SHADES_DETERMINISTIC=1 is set in the environment.
bool deterministic_mode();

/// Single-threaded, deterministic kernels when deterministic_mode() holds.
void apply_execution_mode();

}  // namespace shades
