#include "podnn/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>

#include "podnn/checkpoint.hpp"
#include "podnn/eval.hpp"
#include "podnn/idx.hpp"
#include "podnn/pgm.hpp"

namespace podnn {

namespace {

namespace fs = std::filesystem;

ImageBatch load_base_images(const RunConfig& cfg) {
    if (cfg.dataset_source == "synthetic") {
        return synthetic_images(cfg.trainer.seed, cfg.synthetic_count, cfg.height, cfg.width);
    }
    const std::string path = resolve_data_path(cfg.idx_images);
    if (!fs::exists(path)) {
        throw ConfigError("dataset file not found: " + path);
    }
    ImageBatch batch = load_idx_images(path);
    if (cfg.idx_limit > 0 && batch.count() > cfg.idx_limit) {
        const int h = batch.height(), w = batch.width();
        const int64_t plane = static_cast<int64_t>(h) * w;
        Tensor trimmed({cfg.idx_limit, 1, h, w});
        std::copy(batch.images.data(), batch.images.data() + cfg.idx_limit * plane,
                  trimmed.data());
        batch = ImageBatch(std::move(trimmed));
    }
    return batch;
}

template <class S>
nlohmann::json checkpoint_meta(const RunConfig& cfg, const DatasetPair& data) {
    return {{"n_experts", cfg.trainer.resolved_experts()},
            {"expert_channels", cfg.trainer.expert_channels},
            {"height", data.d_p().height()},
            {"width", data.d_p().width()},
            {"orthogonalization", cfg.trainer.orthogonalization},
            {"precision", cfg.precision}};
}

template <class S>
void save_checkpoint(const std::string& path, const RunConfig& cfg, const DatasetPair& data,
                     PodnnEnsemble<S>& ensemble, DiscriminatorNet<S>& disc) {
    CheckpointArchive a;
    a.meta = checkpoint_meta<S>(cfg, data);
    for (int e = 0; e < ensemble.size(); ++e) {
        checkpoint_put_net<S>(a, "expert" + std::to_string(e), ensemble.expert(e));
    }
    checkpoint_put_net<S>(a, "discriminator", disc);
    a.save(path);
}

// Inference pass over an image batch: per-expert outputs plus real scores.
template <class S>
void score_batch(PodnnEnsemble<S>& ensemble, DiscriminatorNet<S>& disc, const Tensor& images,
                 std::vector<Tensor>* outputs, std::vector<std::vector<double>>* scores) {
    TapeT<S> tape;
    ensemble.bind(tape, false);
    disc.bind(tape, false);
    const auto x = tape.constant(images.template cast<S>());
    std::vector<typename TapeT<S>::Id> u(ensemble.size());
    for (int e = 0; e < ensemble.size(); ++e) {
        u[e] = ensemble.expert(e).forward_to_p(tape, x, /*training=*/false);
    }
    std::vector<typename TapeT<S>::Id> v = u;
    if (ensemble.orthogonalization() && ensemble.size() > 1) {
        v = orthogonalize(tape, u, true).v;
    }
    outputs->clear();
    scores->assign(ensemble.size(), {});
    for (int e = 0; e < ensemble.size(); ++e) {
        const auto out = ensemble.expert(e).forward_from_p(tape, v[e]);
        outputs->push_back(tape.val(out).template cast<double>());
        const DiscOut<S> d = disc.forward(tape, out);
        const TensorT<S>& c = tape.val(d.score);
        (*scores)[e].assign(c.v.begin(), c.v.end());
    }
}

// Periodically renders a fixed slice of transformed inputs next to the
// best-scoring expert's reconstruction.
template <class S>
class SamplingObserver : public StepObserver {
public:
    SamplingObserver(StepObserver& inner, Trainer<S>& trainer, const DatasetPair& data,
                     int cadence, std::string dir)
        : inner_(inner), trainer_(trainer), cadence_(cadence), dir_(std::move(dir)) {
        const int n = std::min(8, data.d_q().count());
        const int h = data.d_q().height(), w = data.d_q().width();
        const int64_t plane = static_cast<int64_t>(h) * w;
        Tensor imgs({n, 1, h, w});
        std::copy(data.d_q().images.data(), data.d_q().images.data() + n * plane, imgs.data());
        probe_ = imgs;
    }

    std::vector<int> on_step(const StepRecord& rec) override {
        const std::vector<int> majority = inner_.on_step(rec);
        if (cadence_ > 0 && rec.iteration % cadence_ == 0) {
            std::vector<Tensor> outs;
            std::vector<std::vector<double>> scores;
            score_batch(trainer_.ensemble(), trainer_.discriminator(), probe_, &outs, &scores);
            const int n = probe_.dim(0);
            Tensor best(probe_.shape);
            const int64_t plane = static_cast<int64_t>(probe_.dim(2)) * probe_.dim(3);
            for (int j = 0; j < n; ++j) {
                int arg = 0;
                for (size_t e = 1; e < scores.size(); ++e) {
                    if (scores[e][j] > scores[arg][j]) arg = static_cast<int>(e);
                }
                std::copy(outs[arg].data() + j * plane, outs[arg].data() + (j + 1) * plane,
                          best.data() + j * plane);
            }
            char name[64];
            std::snprintf(name, sizeof(name), "iter_%06lld.pgm",
                          static_cast<long long>(rec.iteration));
            write_pgm_grid(dir_ + "/" + name, {probe_, best});
        }
        return majority;
    }

private:
    StepObserver& inner_;
    Trainer<S>& trainer_;
    int cadence_;
    std::string dir_;
    Tensor probe_;
};

template <class S>
RunArtifacts execute_run_t(const RunConfig& cfg, const std::string& out_dir) {
    const ImageBatch base = load_base_images(cfg);
    const DatasetPair data = build_dataset(base, cfg.mechanisms, cfg.proportions,
                                           cfg.trainer.seed);

    Trainer<S> trainer(cfg.trainer, data);
    eval::RunObserver observer(data);

    eval::LabelView labels(data);
    std::unique_ptr<eval::OracleDiscriminator> oracle;
    if (cfg.trainer.oracle_scoring) {
        oracle = std::make_unique<eval::OracleDiscriminator>(
            labels, cfg.trainer.resolved_experts(), cfg.trainer.seed);
        trainer.set_assign_score_fn(
            [&o = *oracle](const std::vector<int64_t>& ids) { return o.scores(ids); });
    }

    const bool writing = !out_dir.empty();
    if (writing) {
        fs::create_directories(out_dir);
        fs::create_directories(out_dir + "/checkpoints");
        if (cfg.sample_every > 0) fs::create_directories(out_dir + "/samples");
        std::ofstream cj(out_dir + "/config.json");
        cj << run_config_to_json(cfg).dump(2) << "\n";
        trainer.on_converged = [&] {
            save_checkpoint(out_dir + "/checkpoints/converged.ckpt", cfg, data,
                            trainer.ensemble(), trainer.discriminator());
        };
    }

    RunArtifacts art;
    if (writing && cfg.sample_every > 0) {
        SamplingObserver<S> sampler(observer, trainer, data, cfg.sample_every,
                                    out_dir + "/samples");
        art.result = trainer.run(sampler);
    } else {
        art.result = trainer.run(observer);
    }
    art.metrics = observer.table();

    art.summary = {{"converged", art.result.converged},
                   {"convergence_iteration", art.result.convergence_iteration},
                   {"competitive_iterations", art.result.competitive_iterations},
                   {"standalone_iterations", art.result.standalone_iterations},
                   {"mapping", art.result.mapping}};
    if (oracle) art.summary["oracle_designation"] = oracle->designation();

    if (writing) {
        write_metrics_csv(out_dir + "/metrics.csv", art.metrics);
        write_timing_csv(out_dir + "/timing.csv", art.metrics);
        save_checkpoint(out_dir + "/checkpoints/final.ckpt", cfg, data, trainer.ensemble(),
                        trainer.discriminator());
        std::ofstream sj(out_dir + "/summary.json");
        sj << art.summary.dump(2) << "\n";
    }
    return art;
}

template <class S>
std::vector<double> measure_designated_inversion_t(const RunConfig& cfg,
                                                   const std::string& checkpoint_path,
                                                   const std::vector<int>& designation) {
    const ImageBatch base = load_base_images(cfg);
    const DatasetPair data = build_dataset(base, cfg.mechanisms, cfg.proportions,
                                           cfg.trainer.seed);
    eval::LabelView labels(data);

    const CheckpointArchive a = CheckpointArchive::load(checkpoint_path);
    const int n_experts = a.meta.at("n_experts").get<int>();
    const int channels = a.meta.at("expert_channels").get<int>();
    const bool orth = a.meta.at("orthogonalization").get<bool>();
    PodnnEnsemble<S> ensemble(0, n_experts, channels, orth);
    DiscriminatorNet<S> disc(Rng(0), a.meta.at("height").get<int>(),
                             a.meta.at("width").get<int>());
    for (int e = 0; e < n_experts; ++e) {
        checkpoint_get_net<S>(a, "expert" + std::to_string(e), ensemble.expert(e));
    }
    checkpoint_get_net<S>(a, "discriminator", disc);

    // group d_q element indices by mechanism
    std::vector<std::vector<int64_t>> by_mech(data.n_mechanisms());
    for (int j = 0; j < data.d_q().count(); ++j) {
        by_mech[labels.label_of(j)].push_back(j);
    }

    std::vector<double> mse(data.n_mechanisms(),
                            std::numeric_limits<double>::quiet_NaN());
    const int h = data.d_q().height(), w = data.d_q().width();
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int e = 0; e < n_experts; ++e) {
        const int m = e < static_cast<int>(designation.size()) ? designation[e] : -1;
        if (m < 0 || by_mech[m].empty()) continue;
        const auto& idx = by_mech[m];
        Tensor in({static_cast<int>(idx.size()), 1, h, w});
        for (size_t k = 0; k < idx.size(); ++k) {
            const double* src = data.d_q().images.data() + idx[k] * plane;
            std::copy(src, src + plane, in.data() + static_cast<int64_t>(k) * plane);
        }
        std::vector<Tensor> outs;
        std::vector<std::vector<double>> scores;
        score_batch(ensemble, disc, in, &outs, &scores);
        mse[m] = eval::inversion_error(outs[e], labels.pre_images(idx), labels.spec_of(m));
    }
    return mse;
}

} // namespace

RunArtifacts execute_run(const RunConfig& cfg, const std::string& out_dir) {
    if (cfg.precision == "f64") return execute_run_t<double>(cfg, out_dir);
    return execute_run_t<float>(cfg, out_dir);
}

std::vector<double> measure_designated_inversion(const RunConfig& cfg,
                                                 const std::string& checkpoint_path,
                                                 const std::vector<int>& designation) {
    if (cfg.precision == "f64") {
        return measure_designated_inversion_t<double>(cfg, checkpoint_path, designation);
    }
    return measure_designated_inversion_t<float>(cfg, checkpoint_path, designation);
}

} // namespace podnn
