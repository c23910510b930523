#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "covnat/error.hpp"
#include "covnat/tensor.hpp"

namespace covnat {

// Architecture and TCIR hyperparameters for the non-autoregressive model.
struct ModelConfig {
    Index d_model = 64;
    Index d_hidden = 256;
    Index n_layers = 2;  // encoder depth; decoder = n_layers-1 plain layers + top layer
    Index n_heads = 4;
    Index vocab_size = 0;
    Index max_len = 64;
    Index k_train = 5;
    Index length_bucket_radius = 20;
    double dropout = 0.1;
    double lambda_init = 1.0;
    bool use_tcir = true;  // when false the top layer is a standard decoder layer

    Index n_length_buckets() const { return 2 * length_bucket_radius + 1; }

    void validate() const {
        if (d_model < 1 || d_hidden < 1) throw ConfigError("model dims must be positive");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                              std::to_string(n_heads) + ")");
        if (n_layers < 2) throw ConfigError("n_layers must be >= 2 (top layer replaces layer L)");
        if (k_train < 1) throw ConfigError("k_train must be >= 1");
        if (vocab_size < 5) throw ConfigError("vocab_size must cover the reserved ids");
        if (max_len < 1) throw ConfigError("max_len must be positive");
        if (length_bucket_radius < 1) throw ConfigError("length_bucket_radius must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        m["model_type"] = "nat";
        m["d_model"] = std::to_string(d_model);
        m["d_hidden"] = std::to_string(d_hidden);
        m["n_layers"] = std::to_string(n_layers);
        m["n_heads"] = std::to_string(n_heads);
        m["vocab_size"] = std::to_string(vocab_size);
        m["max_len"] = std::to_string(max_len);
        m["k_train"] = std::to_string(k_train);
        m["length_bucket_radius"] = std::to_string(length_bucket_radius);
        m["dropout"] = std::to_string(dropout);
        m["lambda_init"] = std::to_string(lambda_init);
        m["use_tcir"] = use_tcir ? "1" : "0";
        return m;
    }

    static ModelConfig from_map(const std::map<std::string, std::string>& m) {
        ModelConfig c;
        auto get = [&](const char* key) -> const std::string& {
            auto it = m.find(key);
            if (it == m.end()) throw DataError(std::string("model config missing key: ") + key);
            return it->second;
        };
        c.d_model = std::stoll(get("d_model"));
        c.d_hidden = std::stoll(get("d_hidden"));
        c.n_layers = std::stoll(get("n_layers"));
        c.n_heads = std::stoll(get("n_heads"));
        c.vocab_size = std::stoll(get("vocab_size"));
        c.max_len = std::stoll(get("max_len"));
        c.k_train = std::stoll(get("k_train"));
        c.length_bucket_radius = std::stoll(get("length_bucket_radius"));
        c.dropout = std::stod(get("dropout"));
        c.lambda_init = std::stod(get("lambda_init"));
        c.use_tcir = get("use_tcir") == "1";
        return c;
    }
};

// The autoregressive teacher reuses the dimensional fields and adds a beam.
struct TeacherConfig {
    Index d_model = 64;
    Index d_hidden = 256;
    Index n_layers = 2;
    Index n_heads = 4;
    Index vocab_size = 0;
    Index max_len = 64;
    double dropout = 0.1;
    Index beam = 4;

    void validate() const {
        if (d_model < 1 || d_hidden < 1) throw ConfigError("teacher dims must be positive");
        if (n_heads < 1 || d_model % n_heads != 0) throw ConfigError("teacher d_model must divide by n_heads");
        if (n_layers < 1) throw ConfigError("teacher n_layers must be >= 1");
        if (vocab_size < 5) throw ConfigError("teacher vocab_size must cover the reserved ids");
        if (beam < 1) throw ConfigError("beam must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        m["model_type"] = "teacher";
        m["d_model"] = std::to_string(d_model);
        m["d_hidden"] = std::to_string(d_hidden);
        m["n_layers"] = std::to_string(n_layers);
        m["n_heads"] = std::to_string(n_heads);
        m["vocab_size"] = std::to_string(vocab_size);
        m["max_len"] = std::to_string(max_len);
        m["dropout"] = std::to_string(dropout);
        m["beam"] = std::to_string(beam);
        return m;
    }

    static TeacherConfig from_map(const std::map<std::string, std::string>& m) {
        TeacherConfig c;
        auto get = [&](const char* key) -> const std::string& {
            auto it = m.find(key);
            if (it == m.end()) throw DataError(std::string("teacher config missing key: ") + key);
            return it->second;
        };
        c.d_model = std::stoll(get("d_model"));
        c.d_hidden = std::stoll(get("d_hidden"));
        c.n_layers = std::stoll(get("n_layers"));
        c.n_heads = std::stoll(get("n_heads"));
        c.vocab_size = std::stoll(get("vocab_size"));
        c.max_len = std::stoll(get("max_len"));
        c.dropout = std::stod(get("dropout"));
        c.beam = std::stoll(get("beam"));
        return c;
    }
};

}  // namespace covnat
