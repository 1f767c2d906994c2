#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ramf/feature_io.hpp"

namespace ramf {

enum class PromptStage {
    objective,
    hate_assumed,
    nonhate_assumed,
    zero_shot_text,
    zero_shot_multimodal,
    cot,
};

const char* prompt_stage_name(PromptStage stage);

struct PromptTemplate {
    PromptStage stage;
    std::string body;  // may contain {text} and {frames} placeholders
};

// The versioned template collection. Built-ins are version "v1"; a directory
// of <stage>.txt files (plus VERSION) can replace them without code changes.
struct TemplateSet {
    std::string version;
    std::map<PromptStage, PromptTemplate> templates;

    static TemplateSet builtin();
    static TemplateSet load_dir(const std::filesystem::path& dir);
    void dump_dir(const std::filesystem::path& dir) const;

    const PromptTemplate& at(PromptStage stage) const;
};

// Deterministic text assembly; throws MissingPlaceholder when a template
// needs {frames} but none are given.
std::string render_prompt(const PromptTemplate& tmpl, const std::string& transcript,
                          const std::vector<std::string>& frame_refs);

struct BackendRequest {
    std::string prompt;
    std::vector<std::string> images;
    int max_new_tokens = 2048;
    double temperature = 0.7;
    double top_p = 0.9;

    std::string to_json() const;  // the HTTP wire format, also the mock's input bytes
};

struct BackendSpec {
    enum class Kind { mock, http };
    Kind kind = Kind::mock;
    std::string endpoint;  // http backend only
    int max_new_tokens = 2048;
    double temperature = 0.7;
    double top_p = 0.9;
    bool sampling = true;
    int max_retries = 3;
    int retry_base_ms = 250;
};

class Backend {
public:
    virtual ~Backend() = default;
    // Returns the raw completion text; throws BackendUnavailable on transport
    // failure. Every invocation (including failed ones) bumps the counter.
    virtual std::string complete(const BackendRequest& request) = 0;
    virtual std::string tag() const = 0;
    int64_t request_count() const { return requests_.load(); }

protected:
    std::atomic<int64_t> requests_{0};
};

// Pure function of the request bytes: replies carry a stage marker plus a
// hash prefix. Failure injection and a forced zero-shot reply support tests.
class MockBackend : public Backend {
public:
    std::string complete(const BackendRequest& request) override;
    std::string tag() const override { return "mock"; }

    void force_zero_shot_reply(std::string reply) { forced_reply_ = std::move(reply); }
    void fail_next(int n) { fail_remaining_ = n; }
    int64_t failures_injected() const { return failures_injected_.load(); }

private:
    std::optional<std::string> forced_reply_;
    std::atomic<int> fail_remaining_{0};
    std::atomic<int64_t> failures_injected_{0};
};

// POSTs the JSON request to the configured endpoint; expects {"text": ...}.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(std::string endpoint);
    std::string complete(const BackendRequest& request) override;
    std::string tag() const override { return "http:" + endpoint_; }

private:
    std::string endpoint_;
};

std::unique_ptr<Backend> make_backend(const BackendSpec& spec);

// Content-addressed response cache: one file per key under the directory,
// written atomically (temp + rename). Concurrent readers are fine; writers
// serialize on a mutex.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);
    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const std::string& text);
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex write_mutex_;
};

std::string sha256_hex(const std::string& bytes);

struct ReasoningTriple {
    std::string video_id;
    std::string objective;
    std::string hate_assumed;
    std::string nonhate_assumed;
    std::string backend_tag;
    int frame_count = 0;
    std::string created_at;  // ISO-8601 UTC
};

// Issues the three stage requests in order (objective, hate-assumed,
// non-hate-assumed), with retry/backoff and per-stage caching keyed by the
// content hash of (video_id, transcript, template version+body, backend tag).
ReasoningTriple generate_triple(const std::string& video_id, const std::string& transcript,
                                const std::vector<std::string>& frame_refs, Backend& backend,
                                const TemplateSet& templates, const BackendSpec& spec,
                                ResponseCache* cache = nullptr);

// Single CoT request for the mf_cot variant; cached like the triple stages.
std::string generate_cot(const std::string& video_id, const std::string& transcript,
                         const std::vector<std::string>& frame_refs, Backend& backend,
                         const TemplateSet& templates, const BackendSpec& spec,
                         ResponseCache* cache = nullptr);

enum class ZeroShotMode { text_only, multimodal };

// Accepts exactly "0" or "1" modulo surrounding whitespace.
int parse_verdict(const std::string& reply);

// Zero-shot binary classification; multimodal mode requires exactly 5 frames.
int run_zero_shot(const std::string& transcript, const std::vector<std::string>& frame_refs,
                  Backend& backend, const TemplateSet& templates, const BackendSpec& spec,
                  ZeroShotMode mode);

// Hash-based stand-in for a pretrained text encoder: one seeded pseudo-random
// row per token, zero rows as padding. Lets the full pipeline run end to end
// without any external model.
FeatureMatrix toy_embedding(const std::string& text, int seq_len, int feat_dim, uint64_t seed);

}  // namespace ramf
