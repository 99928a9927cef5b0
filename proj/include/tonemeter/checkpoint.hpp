// Model checkpoints: JSON metadata header + raw little-endian float32
// payload, plus fold-ensemble prediction (majority vote for ranks,
// mean-then-angle for Lab).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tonemeter/color.hpp"
#include "tonemeter/net.hpp"

namespace tonemeter {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is declared little-endian");

struct Provenance {
    uint64_t seed = 0;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    int train_samples = 0;
};

namespace detail {

inline nlohmann::ordered_json config_to_json(const NetworkConfig& c) {
    nlohmann::ordered_json j;
    j["input_size"] = c.input_size;
    j["input_channels"] = c.input_channels;
    auto blocks = nlohmann::ordered_json::array();
    for (const auto& b : c.blocks) {
        blocks.push_back({{"channels", b.channels}, {"kernel", b.kernel}, {"pool", b.pool}});
    }
    j["blocks"] = blocks;
    j["feature_dim"] = c.feature_dim;
    j["head"] = head_kind_name(c.head);
    j["num_classes"] = c.num_classes;
    j["seed"] = c.seed;
    j["norm_mean"] = c.norm_mean;
    j["norm_std"] = c.norm_std;
    j["lab_scale"] = c.lab_scale;
    j["lab_offset"] = c.lab_offset;
    return j;
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.blocks.clear();
    for (const auto& b : j.at("blocks")) {
        c.blocks.push_back({b.at("channels").get<int>(), b.at("kernel").get<int>(),
                            b.at("pool").get<int>()});
    }
    c.feature_dim = j.at("feature_dim").get<int>();
    c.head = head_kind_from_name(j.at("head").get<std::string>());
    c.num_classes = j.at("num_classes").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    j.at("norm_mean").get_to(c.norm_mean);
    j.at("norm_std").get_to(c.norm_std);
    j.at("lab_scale").get_to(c.lab_scale);
    j.at("lab_offset").get_to(c.lab_offset);
    return c;
}

inline uint64_t fnv1a64(std::span<const char> bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

constexpr char kCheckpointMagic[8] = {'T', 'O', 'N', 'E', 'M', 'E', 'T', '1'};

struct ModelCheckpoint {
    int format_version = 1;
    NetworkConfig network;
    std::vector<float> weights;  // flat, tensor layout of Network
    Provenance provenance;

    static ModelCheckpoint from_network(const Network& net, Provenance prov) {
        ModelCheckpoint ck;
        ck.network = net.config();
        ck.provenance = prov;
        ck.weights.reserve(net.param_count());
        for (double p : net.params()) ck.weights.push_back(static_cast<float>(p));
        return ck;
    }

    Network instantiate() const {
        std::vector<double> params(weights.begin(), weights.end());
        return Network::from_params(network, std::move(params));
    }

    std::string serialize() const {
        Network layout_probe(network);  // for tensor descriptors
        if (weights.size() != layout_probe.param_count()) {
            throw validation_error("checkpoint weight count does not match its config");
        }
        nlohmann::ordered_json header;
        header["format_version"] = format_version;
        header["dtype"] = "float32";
        header["byte_order"] = "little";
        header["network"] = detail::config_to_json(network);
        auto tensors = nlohmann::ordered_json::array();
        for (const auto& t : layout_probe.tensors()) {
            tensors.push_back({{"name", t.name},
                               {"shape", t.shape},
                               {"offset", t.offset},
                               {"count", t.count}});
        }
        header["tensors"] = tensors;
        header["provenance"] = {{"seed", provenance.seed},
                                {"epochs_run", provenance.epochs_run},
                                {"best_epoch", provenance.best_epoch},
                                {"best_val_loss", provenance.best_val_loss},
                                {"train_samples", provenance.train_samples}};
        std::string head = header.dump();

        std::string out;
        out.reserve(sizeof(kCheckpointMagic) + 4 + head.size() + weights.size() * 4);
        out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
        uint32_t len = static_cast<uint32_t>(head.size());
        out.append(reinterpret_cast<const char*>(&len), 4);
        out.append(head);
        out.append(reinterpret_cast<const char*>(weights.data()), weights.size() * 4);
        return out;
    }

    static ModelCheckpoint deserialize(std::span<const char> bytes) {
        if (bytes.size() < sizeof(kCheckpointMagic) + 4 ||
            std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
            throw validation_error("not a checkpoint file (bad magic)");
        }
        uint32_t len = 0;
        std::memcpy(&len, bytes.data() + sizeof(kCheckpointMagic), 4);
        size_t head_start = sizeof(kCheckpointMagic) + 4;
        if (bytes.size() < head_start + len) {
            throw validation_error("checkpoint truncated in header");
        }
        nlohmann::json header =
            nlohmann::json::parse(bytes.begin() + head_start, bytes.begin() + head_start + len);

        ModelCheckpoint ck;
        ck.format_version = header.at("format_version").get<int>();
        if (ck.format_version != 1) {
            throw validation_error("unsupported checkpoint format version " +
                                   std::to_string(ck.format_version));
        }
        ck.network = detail::config_from_json(header.at("network"));
        for (const auto& p : header.at("provenance").items()) {
            if (p.key() == "seed") ck.provenance.seed = p.value().get<uint64_t>();
            if (p.key() == "epochs_run") ck.provenance.epochs_run = p.value().get<int>();
            if (p.key() == "best_epoch") ck.provenance.best_epoch = p.value().get<int>();
            if (p.key() == "best_val_loss") ck.provenance.best_val_loss = p.value().get<double>();
            if (p.key() == "train_samples") ck.provenance.train_samples = p.value().get<int>();
        }

        size_t total = 0;
        for (const auto& t : header.at("tensors")) total += t.at("count").get<size_t>();
        size_t payload_start = head_start + len;
        if (bytes.size() != payload_start + total * 4) {
            throw validation_error("checkpoint payload length mismatch");
        }
        ck.weights.resize(total);
        std::memcpy(ck.weights.data(), bytes.data() + payload_start, total * 4);
        return ck;
    }

    void save(const std::string& path) const {
        std::string bytes = serialize();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw validation_error("cannot open checkpoint file for writing: " + path);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw validation_error("failed writing checkpoint: " + path);
    }

    static ModelCheckpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw validation_error("cannot open checkpoint file: " + path);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return deserialize(bytes);
    }

    // Non-cryptographic content hash, used for report provenance.
    uint64_t content_hash() const { return detail::fnv1a64(serialize()); }
};

struct EnsemblePrediction {
    std::optional<int> fp;        // majority-voted rank
    std::optional<LabColor> lab;  // mean of fold Lab outputs
    std::optional<double> ita_degrees;  // ita of the mean Lab (angle of mean)
};

// Fold ensemble with the networks instantiated once. Rank heads: majority
// vote, ties resolved to the lowest rank among the tied. Lab head: fold
// outputs are averaged in Lab first and the angle is taken of the mean,
// never the mean of angles.
class Ensemble {
public:
    explicit Ensemble(std::span<const ModelCheckpoint> checkpoints) {
        if (checkpoints.empty()) {
            throw validation_error("ensemble requires at least one checkpoint");
        }
        for (const auto& ck : checkpoints) {
            if (!ck.network.same_architecture(checkpoints[0].network)) {
                throw validation_error("ensemble checkpoints have mixed architectures");
            }
            nets_.push_back(ck.instantiate());
        }
    }

    HeadKind head() const { return nets_[0].config().head; }

    EnsemblePrediction predict(const PatchTensor& img) const {
        EnsemblePrediction pred;
        if (head() == HeadKind::lab_regression) {
            LabColor mean;
            for (const auto& net : nets_) {
                std::vector<double> out = net.predict(img);
                mean.L += out[0];
                mean.a += out[1];
                mean.b += out[2];
            }
            double n = static_cast<double>(nets_.size());
            mean = LabColor{mean.L / n, mean.a / n, mean.b / n};
            pred.lab = mean;
            pred.ita_degrees = ita(mean).degrees;
        } else {
            std::map<int, int> votes;
            for (const auto& net : nets_) {
                std::vector<double> out = net.predict(img);
                int rank = head() == HeadKind::ordinal ? decode_rank(out).rank
                                                       : decode_argmax(out).rank;
                votes[rank]++;
            }
            int best_rank = 0, best_votes = -1;
            for (const auto& [rank, n] : votes) {  // ascending rank: ties keep the lowest
                if (n > best_votes) {
                    best_votes = n;
                    best_rank = rank;
                }
            }
            pred.fp = best_rank;
        }
        return pred;
    }

private:
    std::vector<Network> nets_;
};

inline EnsemblePrediction ensemble_predict(std::span<const ModelCheckpoint> checkpoints,
                                           const PatchTensor& img) {
    return Ensemble(checkpoints).predict(img);
}

}  // namespace tonemeter
