#include "comac/metrics.hpp"

#include "comac/error.hpp"

namespace comac::metrics {

using detail::require;

ConfusionMatrix::ConfusionMatrix(int n_classes)
    : n_(n_classes), counts_(static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(n_classes), 0) {
    require(n_classes >= 0, "ConfusionMatrix: negative class count");
}

void ConfusionMatrix::add(int pred, int truth) {
    require(pred >= 0 && pred < n_ && truth >= 0 && truth < n_, "ConfusionMatrix: label out of range");
    ++counts_[static_cast<std::size_t>(truth) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(pred)];
    ++total_;
}

void ConfusionMatrix::add(const std::vector<int>& pred, const std::vector<int>& truth) {
    require(pred.size() == truth.size(), "ConfusionMatrix: prediction/truth length mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i)
        add(pred[i], truth[i]);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    require(n_ == other.n_, "ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i)
        counts_[i] += other.counts_[i];
    total_ += other.total_;
    return *this;
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(pred)];
}

IoUReport summarize(const ConfusionMatrix& cm) {
    require(cm.total() > 0, "compute_miou: empty input");
    const int n = cm.n_classes();
    IoUReport r;
    r.n_points = cm.total();
    r.per_class.resize(static_cast<std::size_t>(n));
    std::int64_t correct = 0;
    double sum = 0.0;
    int present = 0;
    for (int k = 0; k < n; ++k) {
        const std::int64_t tp = cm.at(k, k);
        std::int64_t fp = 0, fn = 0;
        for (int j = 0; j < n; ++j) {
            if (j == k)
                continue;
            fp += cm.at(j, k);
            fn += cm.at(k, j);
        }
        correct += tp;
        const std::int64_t denom = tp + fp + fn;
        if (denom == 0)
            continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(denom);
        r.per_class[static_cast<std::size_t>(k)] = iou;
        sum += iou;
        ++present;
    }
    r.miou = present > 0 ? sum / present : 0.0;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(cm.total());
    return r;
}

IoUReport compute_miou(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes) {
    require(!pred.empty(), "compute_miou: empty input");
    ConfusionMatrix cm(n_classes);
    cm.add(pred, truth);
    return summarize(cm);
}

}  // namespace comac::metrics
