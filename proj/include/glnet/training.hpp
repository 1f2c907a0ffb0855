#pragma once

#include "glnet/data.hpp"
#include "glnet/losses.hpp"
#include "glnet/model.hpp"
#include "glnet/optim.hpp"
#include "glnet/sharing.hpp"
#include "glnet/tiling.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

struct TrainPlan {
    std::array<int, 3> epochs{20, 20, 10};
    double lr_global = 1e-4;
    double lr_local = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch_size = 6;
    int accum_period = 1;
    int repeat = 1; // passes over phases 2-3
    int overlap = 16;
    int patches_per_image = 0; // per epoch; 0 = every patch
    LossConfig loss;
    std::uint64_t seed = 1;

    void validate() const
    {
        for (int e : epochs)
            if (e < 0)
                throw std::invalid_argument("negative epoch count");
        if (lr_global < 0 || lr_local < 0)
            throw std::invalid_argument("negative learning rate");
        if (batch_size < 1)
            throw std::invalid_argument("batch size must be >= 1");
        if (accum_period < 1)
            throw std::invalid_argument("accumulation period must be >= 1");
        if (repeat < 1)
            throw std::invalid_argument("repeat must be >= 1");
        if (patches_per_image < 0)
            throw std::invalid_argument("patches_per_image must be >= 0");
        loss.validate();
    }
};

struct LossRecord {
    int phase = 0;
    int epoch = 0;
    long step = 0;
    double loss = 0;
};

struct PatchRef {
    std::size_t image = 0;
    std::size_t rect = 0;
};

// Drives the three training phases over an in-memory training set.
class Trainer {
public:
    using F = float;

    Trainer(GLNet<F>& model, const std::vector<Sample>& data, TrainPlan plan)
        : model_(model), data_(data), plan_(std::move(plan))
    {
        plan_.validate();
        model_.head.set_lambda(plan_.loss.lambda);
        if (data_.empty())
            throw std::invalid_argument("empty dataset");
        const int g = model_.global_size();
        for (const auto& s : data_) {
            auto lr = make_lowres(s.image, s.mask, g, g);
            lowres_.push_back({ops::image_to_tensor<F>(lr.image), std::move(lr.mask)});
            grids_.push_back(build_grid(s.image.height(), s.image.width(), model_.patch_size(), model_.patch_size(),
                                        plan_.overlap));
        }
    }

    const std::vector<LossRecord>& history() const noexcept { return history_; }
    const TrainPlan& plan() const noexcept { return plan_; }
    const TileGrid& grid(std::size_t image) const { return grids_.at(image); }
    std::size_t global_cache_builds() const noexcept { return global_cache_builds_; }
    std::size_t local_cache_builds() const noexcept { return local_cache_builds_; }

    // Optional hook run after each epoch: (phase, epoch) -> false stops the phase.
    std::function<bool(int, int)> on_epoch_end;

    // ---- phase 1: global branch on downsampled pairs ----

    ParamRefs<F> phase1_params() { return model_.global.params(); }

    // Adds this minibatch's gradients; returns its mean loss.
    double phase1_gradients(std::span<const std::size_t> images)
    {
        double total = 0;
        for (auto i : images) {
            BranchCache<F> cache;
            const auto& lr = lowres_.at(i);
            auto out = model_.global.forward(lr.image, nullptr, &cache);
            auto loss = phase1_objective(out.logits, lr.mask, plan_.loss);
            total += loss.value;
            model_.global.backward(cache, loss.grad, {});
        }
        return total / static_cast<double>(images.size());
    }

    void run_phase1()
    {
        LateUpdate<F> opt(Adam<F>(phase1_params(), adam(plan_.lr_global)), plan_.accum_period);
        std::vector<std::size_t> order(data_.size());
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 0; epoch < plan_.epochs[0]; ++epoch) {
            std::mt19937_64 rng(stream_seed(1, epoch));
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t b = 0; b < order.size(); b += plan_.batch_size) {
                const auto n = std::min<std::size_t>(plan_.batch_size, order.size() - b);
                const double loss = phase1_gradients(std::span(order).subspan(b, n));
                opt.end_minibatch(static_cast<int>(n));
                history_.push_back({1, epoch, step_++, loss});
            }
            opt.flush();
            if (on_epoch_end && !on_epoch_end(1, epoch))
                break;
        }
        model_.phase = Phase::global_only;
    }

    // ---- phase 2: local branch + aggregation, global features injected ----

    ParamRefs<F> phase2_params()
    {
        auto ps = model_.local.params();
        if (model_.plan.global_to_local())
            for (auto* p : model_.head.params())
                ps.push_back(p);
        return ps;
    }

    double phase2_gradients(std::span<const PatchRef> patches)
    {
        const bool share = model_.plan.global_to_local();
        const auto shared = model_.shared_taps();
        const auto local_frames = model_.local_config.tap_shapes();
        const int last = model_.local_config.last_tap();
        const int patch = model_.patch_size();
        double total = 0;
        for (const auto& pr : patches) {
            const auto& s = data_.at(pr.image);
            const auto& rect = grids_.at(pr.image).rects.at(pr.rect);
            const auto rel = rect_to_relative(rect, s.image.height(), s.image.width());
            const Tensor<F> x = ops::image_to_tensor<F>(crop(s.image, rect));
            const Mask target = crop(s.mask, rect);
            BranchCache<F> cache;
            if (!share) {
                auto out = model_.local.forward(x, nullptr, &cache);
                auto loss = focal_loss(out.logits, target, plan_.loss.gamma);
                total += loss.value;
                model_.local.backward(cache, loss.grad, {});
                continue;
            }
            const auto& g = global_taps(pr.image);
            const auto inj = share_global_to_local(g, rel, local_frames, shared);
            auto out = model_.local.forward(x, &inj, &cache);
            const auto g_last = crop_resize(g[last], rel, local_frames[last].height, local_frames[last].width);
            AggregationCache<F> acache;
            const auto agg = model_.head.forward(out.taps[last], g_last, patch, patch, &acache);
            auto loss = phase2_objective(out.logits, agg, target, g_last, out.taps[last], plan_.loss);
            total += loss.value;
            Tensor<F> dlast = std::move(loss.grad_local_last);
            model_.head.backward(acache, loss.grad_agg_logits, &dlast, nullptr);
            model_.local.backward(cache, loss.grad_local_logits, dlast);
        }
        return total / static_cast<double>(patches.size());
    }

    void run_phase2()
    {
        if (model_.plan.global_to_local() && model_.phase < Phase::global_only)
            throw std::logic_error("phase 2 requires a trained global branch (run phase 1 first)");
        LateUpdate<F> opt(Adam<F>(phase2_params(), adam(plan_.lr_local)), plan_.accum_period);
        for (int epoch = 0; epoch < plan_.epochs[1]; ++epoch) {
            std::mt19937_64 rng(stream_seed(2 + 10 * pass_, epoch));
            auto patches = epoch_patches(rng);
            for (std::size_t b = 0; b < patches.size(); b += plan_.batch_size) {
                const auto n = std::min<std::size_t>(plan_.batch_size, patches.size() - b);
                const double loss = phase2_gradients(std::span(patches).subspan(b, n));
                opt.end_minibatch(static_cast<int>(n));
                history_.push_back({2, epoch, step_++, loss});
            }
            opt.flush();
            if (on_epoch_end && !on_epoch_end(2, epoch))
                break;
        }
        model_.phase = Phase::global_to_local;
    }

    // ---- phase 3: global branch + aggregation, merged local features injected ----

    ParamRefs<F> phase3_params()
    {
        auto ps = model_.global.params();
        for (auto* p : model_.head.params())
            ps.push_back(p);
        return ps;
    }

    // Gradients for a set of patches of one image.
    double phase3_gradients(std::size_t image, std::span<const std::size_t> rects)
    {
        const auto& s = data_.at(image);
        const auto& grid = grids_.at(image);
        const auto& entry = local_entry(image);
        const auto local_frames = model_.local_config.tap_shapes();
        const int last = model_.local_config.last_tap();
        const int patch = model_.patch_size();

        BranchCache<F> cache;
        const auto& lr = lowres_.at(image);
        auto gout = model_.global.forward(lr.image, &entry.global_injection, &cache);
        Tensor<F> dlogits(gout.logits.shape());
        Tensor<F> dlast(gout.taps[last].shape());
        double total = 0;
        for (auto ri : rects) {
            const auto& rect = grid.rects.at(ri);
            const auto rel = rect_to_relative(rect, s.image.height(), s.image.width());
            const Mask target = crop(s.mask, rect);
            const auto g_at_patch = crop_resize(gout.logits, rel, patch, patch);
            const auto g_last = crop_resize(gout.taps[last], rel, local_frames[last].height, local_frames[last].width);
            AggregationCache<F> acache;
            const auto agg = model_.head.forward(entry.local_last[ri], g_last, patch, patch, &acache);
            auto loss = phase3_objective(g_at_patch, agg, target, plan_.loss);
            total += loss.value;
            Tensor<F> dg_last(g_last.shape());
            model_.head.backward(acache, loss.grad_agg_logits, nullptr, &dg_last);
            crop_resize_backward(loss.grad_global_logits, rel, dlogits);
            crop_resize_backward(dg_last, rel, dlast);
        }
        model_.global.backward(cache, dlogits, dlast);
        return total / static_cast<double>(rects.size());
    }

    void run_phase3()
    {
        if (!model_.plan.local_to_global())
            throw std::logic_error("phase 3 needs bidirectional sharing");
        if (model_.phase < Phase::global_to_local)
            throw std::logic_error("phase 3 requires a trained local branch (run phase 2 first)");
        LateUpdate<F> opt(Adam<F>(phase3_params(), adam(plan_.lr_global)), plan_.accum_period);
        for (int epoch = 0; epoch < plan_.epochs[2]; ++epoch) {
            std::mt19937_64 rng(stream_seed(3 + 10 * pass_, epoch));
            epoch_global_key_ = model_.global.fingerprint();
            std::vector<std::size_t> images(data_.size());
            std::iota(images.begin(), images.end(), 0);
            std::shuffle(images.begin(), images.end(), rng);
            for (auto img : images) {
                auto rects = image_rects(img, rng);
                for (std::size_t b = 0; b < rects.size(); b += plan_.batch_size) {
                    const auto n = std::min<std::size_t>(plan_.batch_size, rects.size() - b);
                    const double loss = phase3_gradients(img, std::span(rects).subspan(b, n));
                    opt.end_minibatch(static_cast<int>(n));
                    history_.push_back({3, epoch, step_++, loss});
                }
            }
            opt.flush();
            if (on_epoch_end && !on_epoch_end(3, epoch))
                break;
        }
        model_.phase = Phase::bidirectional;
    }

    // Phases in order; phases 2-3 are repeated `repeat` times.
    void run(const std::vector<int>& phases)
    {
        for (int p : phases)
            if (p < 1 || p > 3)
                throw std::invalid_argument("unknown phase " + std::to_string(p));
        if (std::count(phases.begin(), phases.end(), 1))
            run_phase1();
        for (pass_ = 0; pass_ < plan_.repeat; ++pass_) {
            if (std::count(phases.begin(), phases.end(), 2))
                run_phase2();
            if (std::count(phases.begin(), phases.end(), 3) && model_.plan.local_to_global())
                run_phase3();
        }
        pass_ = 0;
    }

    // Global taps (no injection) per image, rebuilt when global weights change.
    const std::vector<Tensor<F>>& global_taps(std::size_t image)
    {
        const auto key = model_.global.fingerprint();
        auto it = global_cache_.find(image);
        if (it == global_cache_.end() || it->second.key != key) {
            ++global_cache_builds_;
            GlobalEntry e{key, model_.global.forward(lowres_.at(image).image).taps};
            it = global_cache_.insert_or_assign(image, std::move(e)).first;
        }
        return it->second.taps;
    }

    struct LocalEntry {
        std::uint64_t local_key = 0;
        std::uint64_t global_key = 0;
        Injection<F> global_injection;      // merged local taps, global frame
        std::vector<Tensor<F>> local_last;  // per grid rect
    };

    // Gradient-free local forwards over every patch of the image, merged into
    // the global frame. Rebuilt when the local weights change, and once per
    // epoch as the injected global taps drift.
    const LocalEntry& local_entry(std::size_t image)
    {
        const auto lkey = model_.local.fingerprint();
        const auto gkey = epoch_global_key_ ? epoch_global_key_ : model_.global.fingerprint();
        auto it = local_cache_.find(image);
        if (it != local_cache_.end() && it->second.local_key == lkey && it->second.global_key == gkey)
            return it->second;
        ++local_cache_builds_;
        const auto& s = data_.at(image);
        const auto& grid = grids_.at(image);
        const auto shared = model_.shared_taps();
        const auto local_frames = model_.local_config.tap_shapes();
        const int last = model_.local_config.last_tap();
        const auto gplain = model_.global.forward(lowres_.at(image).image).taps;
        LocalToGlobalMerger<F> merger(grid, model_.global_config.tap_shapes(), shared);
        LocalEntry e{lkey, gkey, {}, {}};
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto rel = rect_to_relative(grid.rects[i], s.image.height(), s.image.width());
            const auto inj = share_global_to_local(gplain, rel, local_frames, shared);
            auto out = model_.local.forward(ops::image_to_tensor<F>(crop(s.image, grid.rects[i])), &inj);
            merger.add(i, out.taps);
            e.local_last.push_back(std::move(out.taps[last]));
        }
        e.global_injection = merger.finish();
        return local_cache_.insert_or_assign(image, std::move(e)).first->second;
    }

private:
    struct LowResTensor {
        Tensor<F> image;
        Mask mask;
    };
    struct GlobalEntry {
        std::uint64_t key = 0;
        std::vector<Tensor<F>> taps;
    };

    AdamConfig adam(double lr) const { return {lr, plan_.beta1, plan_.beta2, 1e-8}; }

    std::uint64_t stream_seed(int stream, int epoch) const
    {
        return detail::mix_seed(detail::mix_seed(plan_.seed, static_cast<std::uint64_t>(stream)),
                                static_cast<std::uint64_t>(epoch));
    }

    std::vector<std::size_t> image_rects(std::size_t image, std::mt19937_64& rng) const
    {
        std::vector<std::size_t> rects(grids_[image].size());
        std::iota(rects.begin(), rects.end(), 0);
        std::shuffle(rects.begin(), rects.end(), rng);
        if (plan_.patches_per_image > 0 && rects.size() > static_cast<std::size_t>(plan_.patches_per_image))
            rects.resize(plan_.patches_per_image);
        return rects;
    }

    std::vector<PatchRef> epoch_patches(std::mt19937_64& rng) const
    {
        std::vector<PatchRef> out;
        for (std::size_t i = 0; i < data_.size(); ++i)
            for (auto r : image_rects(i, rng))
                out.push_back({i, r});
        std::shuffle(out.begin(), out.end(), rng);
        return out;
    }

    GLNet<F>& model_;
    const std::vector<Sample>& data_;
    TrainPlan plan_;
    std::vector<LowResTensor> lowres_;
    std::vector<TileGrid> grids_;
    std::map<std::size_t, GlobalEntry> global_cache_;
    std::map<std::size_t, LocalEntry> local_cache_;
    std::uint64_t epoch_global_key_ = 0;
    std::size_t global_cache_builds_ = 0;
    std::size_t local_cache_builds_ = 0;
    std::vector<LossRecord> history_;
    long step_ = 0;
    int pass_ = 0;
};

} // namespace glnet
