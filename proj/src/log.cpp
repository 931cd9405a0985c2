#include "minitrain/log.hpp"

#include <iostream>

namespace minitrain {

namespace {

LogSink& sink() {
  static LogSink s = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  return s;
}

}  // namespace

LogSink set_warning_sink(LogSink s) {
  LogSink previous = std::move(sink());
  sink() = std::move(s);
  return previous;
}

void warn(const std::string& message) {
  if (sink()) sink()(message);
}

}  // namespace minitrain
