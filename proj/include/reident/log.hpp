#pragma once

#include <string_view>

#include <spdlog/spdlog.h>

namespace reident {

/// Configures the stderr logger from REIDENT_ENS_LOG (error | info | debug).
/// Unset means `error`. Returns false for an unrecognized value.
bool init_logging_from_env();

template <typename... Args>
void log_debug(std::string_view fmt, Args&&... args) {
  if (spdlog::should_log(spdlog::level::debug)) {
    spdlog::debug(fmt::runtime(fmt), std::forward<Args>(args)...);
  }
}

template <typename... Args>
void log_info(std::string_view fmt, Args&&... args) {
  if (spdlog::should_log(spdlog::level::info)) {
    spdlog::info(fmt::runtime(fmt), std::forward<Args>(args)...);
  }
}

template <typename... Args>
void log_error(std::string_view fmt, Args&&... args) {
  if (spdlog::should_log(spdlog::level::err)) {
    spdlog::error(fmt::runtime(fmt), std::forward<Args>(args)...);
  }
}

}  // namespace reident
