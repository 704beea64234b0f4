#pragma once

namespace shades {

/// Entry point of the `shades` command. Returns 0 on success, 1 on usage
/// errors and 2 on runtime errors; failures print one
/// `error: kind=<Kind> message=<text>` line to stderr.
int dispatch(int argc, const char* const* argv);

}  // namespace shades
