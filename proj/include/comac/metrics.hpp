#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace comac::metrics {

/// counts[truth * n + pred]
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int n_classes = 0);

    void add(int pred, int truth);
    void add(const std::vector<int>& pred, const std::vector<int>& truth);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    int n_classes() const noexcept { return n_; }
    std::int64_t at(int truth, int pred) const;
    std::int64_t total() const noexcept { return total_; }

private:
    int n_ = 0;
    std::vector<std::int64_t> counts_;
    std::int64_t total_ = 0;
};

struct IoUReport {
    /// IoU per class; empty for classes absent from both prediction and truth.
    std::vector<std::optional<double>> per_class;
    double miou = 0.0;
    double accuracy = 0.0;
    std::int64_t n_points = 0;
};

/// IoU_k = TP / (TP + FP + FN); classes with TP + FP + FN == 0 are left out of
/// the mean. ContractViolation on an empty confusion matrix.
IoUReport summarize(const ConfusionMatrix& cm);

/// ContractViolation on empty input or out-of-range labels.
IoUReport compute_miou(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes);

}  // namespace comac::metrics
