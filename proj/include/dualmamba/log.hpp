#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace dualmamba {

using WarningSink = std::function<void(std::string_view)>;

// Reports a recoverable condition (degenerate band, tiny class...). The
// default sink writes "warning: <message>" to stderr.
void warn(std::string_view message);

// Replaces the process-wide sink; returns the previous one. An empty sink
// restores the default.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace dualmamba
