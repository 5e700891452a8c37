#pragma once

#include <memory>

#include "psydef/backends.hpp"

namespace psydef {

/// Connection settings for one live inference service.
/// `endpoint` is scheme://host:port; credentials come from the
/// PSYDEF_API_KEY environment variable and are sent as a bearer token.
struct HttpEndpoint {
    std::string endpoint;
    std::string model;
    int timeout_s = 60;
};

struct HttpBackendOptions {
    RetryPolicy retry;
    int max_in_flight = 4;
};

/// Chat-completion-style generator: POST {endpoint}/v1/chat/completions
/// with {model, messages, max_tokens, temperature, seed?}; the reply text
/// is choices[0].message.content.
std::shared_ptr<GenerationBackend> make_http_generation_backend(HttpEndpoint endpoint,
                                                                HttpBackendOptions options);

/// POST {endpoint}/v1/nli with {model, premise, hypothesis} ->
/// {"entailment": float}.
std::shared_ptr<NliBackend> make_http_nli_backend(HttpEndpoint endpoint,
                                                  HttpBackendOptions options);

/// POST {endpoint}/v1/emotion with {model, text} ->
/// {"label": str, "confidence": float, "is_neutral": bool}.
std::shared_ptr<EmotionBackend> make_http_emotion_backend(HttpEndpoint endpoint,
                                                          HttpBackendOptions options);

/// POST {endpoint}/v1/encode with {model, text} -> {"embedding": [768]}.
/// Live encoders are inference-only here; fine-tuning a remote encoder is
/// out of this gateway's contract, so trainable() is null.
std::shared_ptr<TextEncoderBackend> make_http_encoder_backend(HttpEndpoint endpoint,
                                                              HttpBackendOptions options);

/// Total requests attempted by all HTTP gateways (for logging/tests).
std::int64_t http_attempt_count();

}  // namespace psydef
