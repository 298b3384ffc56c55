#pragma once

#include "icd/gateway.hpp"
#include "icd/retrieval.hpp"

namespace icd::retrieval {

/// OpenAI-style embeddings endpoint ({"model", "input"} -> data[0].embedding).
/// Vectors are re-normalized; blank text maps to e_1 without a request.
class HttpEmbedder : public EmbeddingProvider {
public:
    HttpEmbedder(gateway::EndpointConfig cfg, int dimension);
    std::string id() const override;
    int dimension() const override { return dim_; }
    Embedding embed(const std::string& text) const override;

private:
    gateway::EndpointConfig cfg_;
    int dim_;
};

}  // namespace icd::retrieval
