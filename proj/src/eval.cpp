#include "hsi/eval.hpp"

#include <cmath>
#include <stdexcept>

namespace hsi::eval {

namespace {

__extension__ typedef __int128 Wide;

Wide gcd(Wide a, Wide b) {
    if (a < 0) a = -a;
    while (b != 0) {
        const Wide t = a % b;
        a = b;
        b = t;
    }
    return a;
}

void require_nonempty(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::domain_error("metrics of an empty confusion matrix");
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), m_(classes * classes, 0) {
    if (classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int truth, int pred, std::uint64_t count) {
    auto check = [&](int id, const char* what) {
        if (id < 1 || static_cast<std::size_t>(id) > n_)
            throw std::invalid_argument(std::string(what) + " class id " + std::to_string(id) + " outside [1, " +
                                        std::to_string(n_) + "]");
    };
    check(truth, "true");
    check(pred, "predicted");
    m_[static_cast<std::size_t>(truth - 1) * n_ + static_cast<std::size_t>(pred - 1)] += count;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw std::invalid_argument("confusion matrices differ in class count");
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto v : m_) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += m_[i * n_ + i];
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t i) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < n_; ++j) t += m_.at(i * n_ + j);
    return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t j) const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += m_.at(i * n_ + j);
    return t;
}

ConfusionMatrix accumulate(std::span<const int> preds, std::span<const int> truths, std::size_t classes) {
    if (preds.size() != truths.size())
        throw std::invalid_argument("prediction and truth lists differ in length (" + std::to_string(preds.size()) +
                                    " vs " + std::to_string(truths.size()) + ")");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(truths[i], preds[i]);
    return cm;
}

double oa(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

std::vector<double> per_class(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    std::vector<double> out(cm.classes());
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        const std::uint64_t row = cm.row_sum(i);
        if (row == 0) throw std::domain_error("class " + std::to_string(i + 1) + " has no samples");
        out[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    }
    return out;
}

double aa(const ConfusionMatrix& cm) {
    const auto pc = per_class(cm);
    double sum = 0.0;
    for (double v : pc) sum += v;
    return sum / static_cast<double>(pc.size());
}

double kappa(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    const Wide n = cm.total();
    Wide s = 0;
    for (std::size_t i = 0; i < cm.classes(); ++i) s += static_cast<Wide>(cm.row_sum(i)) * cm.col_sum(i);
    Wide den = n * n - s;
    if (den == 0) throw std::domain_error("kappa is undefined when chance agreement is 1");
    Wide num = n * static_cast<Wide>(cm.trace()) - s;
    // Reduced first so both parts stay exact as doubles for any realistic count.
    if (const Wide g = gcd(num, den); g > 1) {
        num /= g;
        den /= g;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

double percent2(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

const std::vector<Rgb>& default_palette() {
    static const std::vector<Rgb> palette{
        {0, 0, 0},       {192, 192, 192}, {0, 255, 0},   {0, 255, 255}, {0, 128, 0},
        {255, 0, 255},   {165, 82, 41},   {128, 0, 128}, {255, 0, 0},   {255, 255, 0},
    };
    return palette;
}

std::vector<unsigned char> render_map(const data::LabelImage& labels, const std::vector<Rgb>& palette) {
    const std::string header = "P6\n" + std::to_string(labels.cols) + " " + std::to_string(labels.rows) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + 3 * labels.data.size());
    for (auto v : labels.data) {
        if (v >= palette.size())
            throw std::invalid_argument("label " + std::to_string(v) + " has no palette colour (palette size " +
                                        std::to_string(palette.size()) + ")");
        out.insert(out.end(), palette[v].begin(), palette[v].end());
    }
    return out;
}

ConfusionMatrix confusion_at(const data::LabelImage& pred, const data::LabelImage& truth,
                             std::span<const data::Pixel> pixels, std::size_t classes) {
    ConfusionMatrix cm(classes);
    for (const auto& p : pixels) cm.add(truth.at(p.row, p.col), pred.at(p.row, p.col));
    return cm;
}

}  // namespace hsi::eval
