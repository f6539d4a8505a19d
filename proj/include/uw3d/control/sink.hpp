#pragma once

// Destinations for session artifacts.

#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>

#include <json.hpp>

#include "uw3d/image.hpp"

namespace uw3d::control {

class UploadSink {
 public:
  virtual ~UploadSink() = default;
  virtual void put_image(const std::string& session, int camera, int pattern, const std::string& pgm) = 0;
  virtual void put_file(const std::string& session, const std::string& name, const std::string& bytes) = 0;
  virtual void put_manifest(const std::string& session, const nlohmann::json& manifest) = 0;
};

inline std::string sink_image_path(const std::string& session, int camera, int pattern) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "cam%d/pat%03d.pgm", camera, pattern);
  return "session-" + session + "/" + buf;
}

// session-<id>/cam<k>/pat<idx>.pgm and session-<id>/manifest.json under a root.
class DirectorySink : public UploadSink {
 public:
  explicit DirectorySink(std::filesystem::path root) : root_(std::move(root)) {}

  void put_image(const std::string& session, int camera, int pattern, const std::string& pgm) override {
    write_file(root_ / sink_image_path(session, camera, pattern), pgm);
  }
  void put_file(const std::string& session, const std::string& name, const std::string& bytes) override {
    write_file(root_ / ("session-" + session) / name, bytes);
  }
  void put_manifest(const std::string& session, const nlohmann::json& manifest) override {
    write_file(root_ / ("session-" + session) / "manifest.json", manifest.dump(2) + "\n");
  }

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

// Keeps everything in memory, keyed by relative path.
class MemorySink : public UploadSink {
 public:
  void put_image(const std::string& session, int camera, int pattern, const std::string& pgm) override {
    std::lock_guard lock(mu_);
    files_[sink_image_path(session, camera, pattern)] = pgm;
  }
  void put_file(const std::string& session, const std::string& name, const std::string& bytes) override {
    std::lock_guard lock(mu_);
    files_["session-" + session + "/" + name] = bytes;
  }
  void put_manifest(const std::string& session, const nlohmann::json& manifest) override {
    std::lock_guard lock(mu_);
    files_["session-" + session + "/manifest.json"] = manifest.dump(2) + "\n";
  }

  std::map<std::string, std::string> files() const {
    std::lock_guard lock(mu_);
    return files_;
  }

  // Images and manifests stored for one session.
  std::pair<std::size_t, std::size_t> count(const std::string& session) const {
    std::lock_guard lock(mu_);
    const std::string prefix = "session-" + session + "/";
    std::size_t images = 0, manifests = 0;
    for (const auto& [path, _] : files_) {
      if (!path.starts_with(prefix)) continue;
      if (path.ends_with(".pgm")) ++images;
      if (path.ends_with("manifest.json")) ++manifests;
    }
    return {images, manifests};
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> files_;
};

}  // namespace uw3d::control
