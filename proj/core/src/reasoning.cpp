#include "ramf/reasoning.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "ramf/errors.hpp"
#include "ramf/random.hpp"

namespace ramf {

namespace {

constexpr const char* kBuiltinVersion = "v1";

const char* builtin_body(PromptStage stage) {
    switch (stage) {
        case PromptStage::objective:
            return "Stage 1: Objective Description.\n"
                   "Examine the video frames and the transcript below. Generate an objective "
                   "description of the visual elements observed in the video and the accompanying "
                   "text, without involving interpretative judgments. Describe only what is "
                   "directly observable and reference concrete visual evidence.\n"
                   "Video frames: {frames}\n"
                   "Transcript: {text}";
        case PromptStage::hate_assumed:
            return "Stage 2: Hate-Assumed Inference.\n"
                   "Assuming the content contains hate speech, explore discriminatory expressions "
                   "and offensive content targeting specific groups, and provide contextual "
                   "evidence and reasons for this interpretation. Reference the video frames and "
                   "transcript directly.\n"
                   "Video frames: {frames}\n"
                   "Transcript: {text}";
        case PromptStage::nonhate_assumed:
            return "Stage 3: Non-Hate-Assumed Inference.\n"
                   "Assuming the content does not contain hate speech, explore reasonable "
                   "alternative interpretations (such as artistic expression, satirical context, "
                   "personal conflicts, etc.) and provide contextual evidence and reasons for this "
                   "interpretation. Reference the video frames and transcript directly.\n"
                   "Video frames: {frames}\n"
                   "Transcript: {text}";
        case PromptStage::zero_shot_text:
            return "Please determine whether the following text contains hateful content. "
                   "If it contains hateful content, please return 1; if it does not contain "
                   "hateful content, please return 0. Just return 1 or 0, no other words. "
                   "Here is the following text: {text}";
        case PromptStage::zero_shot_multimodal:
            return "Please analyse both the video frames and the following text to determine if "
                   "they contain hateful content. If contain hateful content, please return 1; "
                   "if not contains hateful content, please return 0. Just return 1 or 0, no "
                   "other words. Here is the text: {text}";
        case PromptStage::cot:
            return "Analyse the video step by step before judging whether it contains hateful "
                   "content.\n"
                   "Step 1 - Visual Understanding: describe what the video frames show.\n"
                   "Step 2 - Textual Analysis: analyse the meaning and tone of the transcript.\n"
                   "Step 3 - Multimodal Reasoning: relate the visual and textual observations to "
                   "each other and to the broader context.\n"
                   "Step 4 - Final Evaluation: state whether the content is hateful and justify "
                   "the conclusion.\n"
                   "Video frames: {frames}\n"
                   "Transcript: {text}";
    }
    return "";
}

const PromptStage kAllStages[] = {
    PromptStage::objective,        PromptStage::hate_assumed, PromptStage::nonhate_assumed,
    PromptStage::zero_shot_text,   PromptStage::zero_shot_multimodal,
    PromptStage::cot,
};

void validate_templates(const TemplateSet& set) {
    for (PromptStage stage : {PromptStage::zero_shot_text, PromptStage::zero_shot_multimodal}) {
        const auto& body = set.at(stage).body;
        if (body.find("Just return 1 or 0") == std::string::npos) {
            raise(ErrorKind::InvalidArgument,
                  std::string(prompt_stage_name(stage)) +
                      " template must contain the literal instruction 'Just return 1 or 0'");
        }
    }
}

std::string replace_all(std::string text, const std::string& needle, const std::string& value) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), value);
        pos += value.size();
    }
    return text;
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string iso_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm_utc;
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string cache_key(const std::vector<std::string>& parts) {
    std::string joined;
    for (const auto& p : parts) {
        joined += std::to_string(p.size());
        joined += ':';
        joined += p;
        joined += ';';
    }
    return sha256_hex(joined);
}

struct StageResult {
    std::string text;
    int retries = 0;
    bool from_cache = false;
};

std::string complete_with_retry(Backend& backend, const BackendSpec& spec,
                                const BackendRequest& request, int* retries_out) {
    int attempt = 0;
    for (;;) {
        try {
            return backend.complete(request);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::BackendUnavailable || attempt >= spec.max_retries) throw;
            std::this_thread::sleep_for(
                std::chrono::milliseconds(spec.retry_base_ms * (1 << attempt)));
            ++attempt;
            if (retries_out) ++*retries_out;
        }
    }
}

StageResult run_stage(PromptStage stage, const std::string& video_id, const std::string& transcript,
                      const std::vector<std::string>& frame_refs, Backend& backend,
                      const TemplateSet& templates, const BackendSpec& spec, ResponseCache* cache) {
    const PromptTemplate& tmpl = templates.at(stage);
    std::string key;
    if (cache) {
        key = cache_key({prompt_stage_name(stage), video_id, transcript, templates.version,
                         tmpl.body, backend.tag()});
        if (auto hit = cache->get(key)) return {*hit, 0, true};
    }
    BackendRequest request;
    request.prompt = render_prompt(tmpl, transcript, frame_refs);
    request.images = frame_refs;
    request.max_new_tokens = spec.max_new_tokens;
    request.temperature = spec.temperature;
    request.top_p = spec.top_p;

    StageResult result;
    result.text = complete_with_retry(backend, spec, request, &result.retries);
    if (result.text.empty()) {
        raise(ErrorKind::EmptyResponse,
              std::string(prompt_stage_name(stage)) + " stage returned an empty reply");
    }
    if (cache) cache->put(key, result.text);
    return result;
}

}  // namespace

const char* prompt_stage_name(PromptStage stage) {
    switch (stage) {
        case PromptStage::objective: return "objective";
        case PromptStage::hate_assumed: return "hate_assumed";
        case PromptStage::nonhate_assumed: return "nonhate_assumed";
        case PromptStage::zero_shot_text: return "zero_shot_text";
        case PromptStage::zero_shot_multimodal: return "zero_shot_multimodal";
        case PromptStage::cot: return "cot";
    }
    return "unknown";
}

TemplateSet TemplateSet::builtin() {
    TemplateSet set;
    set.version = kBuiltinVersion;
    for (PromptStage stage : kAllStages) set.templates[stage] = {stage, builtin_body(stage)};
    validate_templates(set);
    return set;
}

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
    TemplateSet set;
    std::ifstream vf(dir / "VERSION");
    if (!vf || !std::getline(vf, set.version) || set.version.empty()) {
        raise(ErrorKind::IoError, "template dir lacks a VERSION file: " + dir.string());
    }
    for (PromptStage stage : kAllStages) {
        const auto path = dir / (std::string(prompt_stage_name(stage)) + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (!in) raise(ErrorKind::IoError, "missing template file " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        std::string body = ss.str();
        // Trim one trailing newline so dump/load round-trips.
        if (!body.empty() && body.back() == '\n') body.pop_back();
        set.templates[stage] = {stage, body};
    }
    validate_templates(set);
    return set;
}

void TemplateSet::dump_dir(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream vf(dir / "VERSION");
    vf << version << "\n";
    for (const auto& [stage, tmpl] : templates) {
        std::ofstream out(dir / (std::string(prompt_stage_name(stage)) + ".txt"), std::ios::binary);
        out << tmpl.body << "\n";
    }
}

const PromptTemplate& TemplateSet::at(PromptStage stage) const {
    auto it = templates.find(stage);
    if (it == templates.end()) {
        raise(ErrorKind::InvalidArgument,
              std::string("template set lacks stage ") + prompt_stage_name(stage));
    }
    return it->second;
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& transcript,
                          const std::vector<std::string>& frame_refs) {
    std::string body = tmpl.body;
    if (body.find("{frames}") != std::string::npos) {
        if (frame_refs.empty()) {
            raise(ErrorKind::MissingPlaceholder,
                  std::string("template ") + prompt_stage_name(tmpl.stage) +
                      " requires {frames} but no frame refs were given");
        }
        std::string joined;
        for (size_t i = 0; i < frame_refs.size(); ++i) {
            if (i) joined += ", ";
            joined += frame_refs[i];
        }
        body = replace_all(std::move(body), "{frames}", joined);
    }
    return replace_all(std::move(body), "{text}", transcript);
}

std::string BackendRequest::to_json() const {
    nlohmann::json j;
    j["prompt"] = prompt;
    j["images"] = images;
    j["max_new_tokens"] = max_new_tokens;
    j["temperature"] = temperature;
    j["top_p"] = top_p;
    return j.dump();
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string MockBackend::complete(const BackendRequest& request) {
    requests_.fetch_add(1);
    int expected = fail_remaining_.load();
    while (expected > 0) {
        if (fail_remaining_.compare_exchange_weak(expected, expected - 1)) {
            failures_injected_.fetch_add(1);
            raise(ErrorKind::BackendUnavailable, "injected mock failure");
        }
    }
    const std::string digest = sha256_hex(request.to_json());
    const std::string prefix = digest.substr(0, 12);
    const std::string& p = request.prompt;
    if (p.find("Just return 1 or 0") != std::string::npos) {
        if (forced_reply_) return *forced_reply_;
        const int nibble = digest.back() >= 'a' ? digest.back() - 'a' + 10 : digest.back() - '0';
        return nibble % 2 ? "1" : "0";
    }
    if (p.find("without involving interpretative judgments") != std::string::npos) {
        return "MOCK-OBJ:" + prefix;
    }
    if (p.find("explore discriminatory expressions") != std::string::npos) {
        return "MOCK-HATE:" + prefix;
    }
    if (p.find("reasonable alternative interpretations") != std::string::npos) {
        return "MOCK-NONHATE:" + prefix;
    }
    if (p.find("Final Evaluation") != std::string::npos) {
        return "MOCK-COT:" + prefix;
    }
    return "MOCK:" + prefix;
}

HttpBackend::HttpBackend(std::string endpoint) : endpoint_(std::move(endpoint)) {}

std::string HttpBackend::complete(const BackendRequest& request) {
    requests_.fetch_add(1);
    const auto scheme_end = endpoint_.find("://");
    if (scheme_end == std::string::npos) {
        raise(ErrorKind::InvalidArgument, "endpoint must look like http://host:port/path");
    }
    const auto path_start = endpoint_.find('/', scheme_end + 3);
    const std::string base =
        path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

    httplib::Client client(base);
    client.set_connection_timeout(10);
    client.set_read_timeout(120);
    auto res = client.Post(path, request.to_json(), "application/json");
    if (!res || res->status != 200) {
        raise(ErrorKind::BackendUnavailable,
              "POST " + endpoint_ + (res ? " -> status " + std::to_string(res->status)
                                         : " -> no response"));
    }
    try {
        auto j = nlohmann::json::parse(res->body);
        return j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorKind::BackendUnavailable, "malformed backend reply: " + std::string(e.what()));
    }
}

std::unique_ptr<Backend> make_backend(const BackendSpec& spec) {
    if (spec.kind == BackendSpec::Kind::mock) return std::make_unique<MockBackend>();
    return std::make_unique<HttpBackend>(spec.endpoint);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
    const auto path = dir_ / (key + ".txt");
    if (!std::filesystem::exists(path)) return std::nullopt;
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::CacheCorruption, "cache entry unreadable: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (in.bad()) raise(ErrorKind::CacheCorruption, "cache entry truncated: " + path.string());
    return ss.str();
}

void ResponseCache::put(const std::string& key, const std::string& text) {
    std::lock_guard<std::mutex> lock(write_mutex_);
    const auto path = dir_ / (key + ".txt");
    const auto tmp = dir_ / (key + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) raise(ErrorKind::IoError, "cannot write cache entry " + tmp.string());
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

ReasoningTriple generate_triple(const std::string& video_id, const std::string& transcript,
                                const std::vector<std::string>& frame_refs, Backend& backend,
                                const TemplateSet& templates, const BackendSpec& spec,
                                ResponseCache* cache) {
    ReasoningTriple triple;
    triple.video_id = video_id;
    triple.backend_tag = backend.tag();
    triple.frame_count = static_cast<int>(frame_refs.size());
    triple.created_at = iso_utc_now();
    // The three requests go out in stage order.
    triple.objective = run_stage(PromptStage::objective, video_id, transcript, frame_refs, backend,
                                 templates, spec, cache)
                           .text;
    triple.hate_assumed = run_stage(PromptStage::hate_assumed, video_id, transcript, frame_refs,
                                    backend, templates, spec, cache)
                              .text;
    triple.nonhate_assumed = run_stage(PromptStage::nonhate_assumed, video_id, transcript,
                                       frame_refs, backend, templates, spec, cache)
                                 .text;
    return triple;
}

std::string generate_cot(const std::string& video_id, const std::string& transcript,
                         const std::vector<std::string>& frame_refs, Backend& backend,
                         const TemplateSet& templates, const BackendSpec& spec,
                         ResponseCache* cache) {
    return run_stage(PromptStage::cot, video_id, transcript, frame_refs, backend, templates, spec,
                     cache)
        .text;
}

int parse_verdict(const std::string& reply) {
    size_t begin = reply.find_first_not_of(" \t\r\n\f\v");
    if (begin == std::string::npos) {
        raise(ErrorKind::UnparseableVerdict, "empty reply (expected '0' or '1')");
    }
    size_t end = reply.find_last_not_of(" \t\r\n\f\v");
    const std::string body = reply.substr(begin, end - begin + 1);
    if (body == "0") return 0;
    if (body == "1") return 1;
    std::string shown = reply.substr(0, 120);
    raise(ErrorKind::UnparseableVerdict, "reply was '" + shown + "' (expected '0' or '1')");
}

int run_zero_shot(const std::string& transcript, const std::vector<std::string>& frame_refs,
                  Backend& backend, const TemplateSet& templates, const BackendSpec& spec,
                  ZeroShotMode mode) {
    if (mode == ZeroShotMode::multimodal && frame_refs.size() != 5) {
        raise(ErrorKind::WrongFrameCount, "multimodal zero-shot needs exactly 5 frames, got " +
                                              std::to_string(frame_refs.size()));
    }
    const PromptStage stage = mode == ZeroShotMode::multimodal ? PromptStage::zero_shot_multimodal
                                                               : PromptStage::zero_shot_text;
    BackendRequest request;
    request.prompt = render_prompt(templates.at(stage), transcript, frame_refs);
    if (mode == ZeroShotMode::multimodal) request.images = frame_refs;
    request.max_new_tokens = spec.max_new_tokens;
    request.temperature = spec.temperature;
    request.top_p = spec.top_p;
    int retries = 0;
    return parse_verdict(complete_with_retry(backend, spec, request, &retries));
}

FeatureMatrix toy_embedding(const std::string& text, int seq_len, int feat_dim, uint64_t seed) {
    std::vector<std::string> tokens;
    std::istringstream iss(text);
    std::string token;
    while (iss >> token) tokens.push_back(token);

    FeatureMatrix mat;
    mat.rows = seq_len;
    mat.cols = feat_dim;
    mat.data.assign(static_cast<size_t>(seq_len) * feat_dim, 0.0f);
    const int n = std::min<int>(seq_len, static_cast<int>(tokens.size()));
    for (int t = 0; t < n; ++t) {
        Xoshiro256ss rng(mix_seed(seed, fnv1a64(tokens[static_cast<size_t>(t)])));
        for (int c = 0; c < feat_dim; ++c) {
            mat.at(t, c) = static_cast<float>(rng.gaussian());
        }
    }
    return mat;
}

}  // namespace ramf
