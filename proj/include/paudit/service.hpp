#pragma once

// Annotation HTTP service for the jury workflow. All endpoints speak JSON:
//   GET  /api/queue?annotator=ID&task=T[&limit=N]
//   GET  /api/images/{id}
//   POST /api/annotations
//   GET  /api/disagreements[?reveal=1]
//   GET  /api/progress
//   GET  /api/annotators

#include <filesystem>
#include <memory>
#include <string>

#include "paudit/voting.hpp"

namespace paudit {

struct ServiceOptions {
  std::filesystem::path manifest;  // dataset manifest (JSON lines)
  std::filesystem::path store;     // annotation JSON-lines store
  std::filesystem::path profiles;  // optional annotator profile CSV
  std::filesystem::path static_dir;  // optional UI assets mounted at /
  WeightPolicy weights;
};

class AnnotationService {
 public:
  explicit AnnotationService(ServiceOptions options);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port; throws Error when binding fails.
  int start(const std::string& host, int port);
  // Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace paudit
