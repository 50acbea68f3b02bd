#pragma once

#include <functional>
#include <string>

namespace tactile::log {

enum class Level { Info, Warning, Error };

using Sink = std::function<void(Level, const std::string&)>;

// Replaces the process-wide sink (default: stderr). Returns the previous one.
Sink set_sink(Sink sink);

void write(Level level, const std::string& message);

inline void info(const std::string& m) { write(Level::Info, m); }
inline void warn(const std::string& m) { write(Level::Warning, m); }
inline void error(const std::string& m) { write(Level::Error, m); }

}  // namespace tactile::log
