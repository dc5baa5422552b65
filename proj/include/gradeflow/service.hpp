#pragma once

// JSON review API over a ReviewStore:
//   GET  /api/flags
//   GET  /api/students/{pseudo_id}
//   POST /api/students/{pseudo_id}/resolve   {final_total, note, version}
//   POST /api/students/{pseudo_id}/reopen    {version?}
// Errors are {code, message}. Display names never pass through here.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "gradeflow/review.hpp"

namespace gradeflow {

/// "host:port", "port" or ":port"; host defaults to 127.0.0.1.
std::pair<std::string, int> parse_bind_address(const std::string& text);

class ReviewService {
public:
    /// `static_dir`, when set, is served at / (the review UI build).
    explicit ReviewService(ReviewStore& store, std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~ReviewService();
    ReviewService(const ReviewService&) = delete;
    ReviewService& operator=(const ReviewService&) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port.
    /// Returns the bound port. Throws std::runtime_error on bind failure.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from elsewhere.
    void wait();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace gradeflow
