#pragma once

#include "glnet/tensor.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace glnet {

// Dataset-level confusion matrix; rows are ground truth, columns prediction.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes) : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0)
    {
        if (num_classes < 1)
            throw std::invalid_argument("confusion matrix needs at least one class");
    }

    int num_classes() const noexcept { return k_; }

    void add(const Mask& pred, const Mask& gt)
    {
        if (pred.shape() != gt.shape())
            throw std::invalid_argument("prediction/ground-truth shape mismatch: " + to_string(pred.shape()) + " vs " +
                                        to_string(gt.shape()));
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] >= k_ || pred[i] >= k_)
                throw std::invalid_argument("label out of range");
            ++counts_[static_cast<std::size_t>(gt[i]) * k_ + pred[i]];
        }
    }

    std::uint64_t at(int gt, int pred) const { return counts_.at(static_cast<std::size_t>(gt) * k_ + pred); }

    // IoU of class c, or nothing when c is absent from both gt and prediction.
    std::optional<double> iou(int c) const
    {
        std::uint64_t tp = at(c, c), row = 0, col = 0;
        for (int j = 0; j < k_; ++j) {
            row += at(c, j);
            col += at(j, c);
        }
        const std::uint64_t uni = row + col - tp;
        if (uni == 0)
            return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(uni);
    }

    double miou(std::optional<int> ignore = std::nullopt) const
    {
        double sum = 0;
        int n = 0;
        for (int c = 0; c < k_; ++c) {
            if (ignore && *ignore == c)
                continue;
            if (auto v = iou(c)) {
                sum += *v;
                ++n;
            }
        }
        return n ? sum / n : 1.0;
    }

private:
    int k_;
    std::vector<std::uint64_t> counts_;
};

inline double miou(const std::vector<Mask>& pred, const std::vector<Mask>& gt, int num_classes,
                   std::optional<int> ignore = std::nullopt)
{
    if (pred.size() != gt.size())
        throw std::invalid_argument("prediction/ground-truth count mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < pred.size(); ++i)
        cm.add(pred[i], gt[i]);
    return cm.miou(ignore);
}

// Foreground IoU of one binary pair; an image with no foreground in either
// mask counts as a perfect match.
inline double binary_iou(const Mask& pred, const Mask& gt)
{
    if (pred.shape() != gt.shape())
        throw std::invalid_argument("prediction/ground-truth shape mismatch");
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1)
            throw std::invalid_argument("isic score needs binary masks");
        inter += pred[i] & gt[i];
        uni += pred[i] | gt[i];
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

inline double isic_threshold(double iou) { return iou < 0.65 ? 0.0 : iou; }

inline double isic_score(const std::vector<Mask>& pred, const std::vector<Mask>& gt)
{
    if (pred.size() != gt.size())
        throw std::invalid_argument("prediction/ground-truth count mismatch");
    if (pred.empty())
        throw std::invalid_argument("isic score over an empty set");
    double sum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        sum += isic_threshold(binary_iou(pred[i], gt[i]));
    return sum / static_cast<double>(pred.size());
}

} // namespace glnet
