#ifndef PMNET_METRICS_HPP
#define PMNET_METRICS_HPP

#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pmnet/errors.hpp"
#include "pmnet/synthgen.hpp"

namespace pmnet {

// Frame-level evaluation. Per phase, from the 5x5 confusion matrix:
//   precision = TP/(TP+FP), recall = TP/(TP+FN), jaccard = TP/(TP+FP+FN),
// each defined only when its denominator is nonzero; macro averages skip
// undefined entries. All values are percentages.
struct PhaseMetrics {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> jaccard;
};

struct MetricReport {
    std::array<PhaseMetrics, kNumPhases> per_phase;
    double macro_precision = 0;
    double macro_recall = 0;
    double macro_jaccard = 0;
    double accuracy = 0;
    // Effectiveness over Knotting-phase frames, positive class = ineffective.
    bool eff_defined = false;
    double eff_precision = 0;
    double eff_recall = 0;
    double eff_accuracy = 0;
    double eff_jaccard = 0;
};

inline MetricReport compute_phase_metrics(const std::vector<int>& labels,
                                          const std::vector<int>& preds) {
    if (labels.size() != preds.size() || labels.empty())
        throw InputError("metrics: labels/preds size mismatch");
    long confusion[kNumPhases][kNumPhases] = {};
    long correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        confusion[labels[i]][preds[i]] += 1;
        if (labels[i] == preds[i]) ++correct;
    }
    MetricReport r;
    r.accuracy = 100.0 * correct / static_cast<double>(labels.size());
    double sp = 0, sr = 0, sj = 0;
    int np = 0, nr = 0, nj = 0;
    for (int j = 0; j < kNumPhases; ++j) {
        long tp = confusion[j][j], fp = 0, fn = 0;
        for (int k = 0; k < kNumPhases; ++k) {
            if (k == j) continue;
            fp += confusion[k][j];
            fn += confusion[j][k];
        }
        auto& m = r.per_phase[j];
        if (tp + fp > 0) {
            m.precision = 100.0 * tp / static_cast<double>(tp + fp);
            sp += *m.precision;
            ++np;
        }
        if (tp + fn > 0) {
            m.recall = 100.0 * tp / static_cast<double>(tp + fn);
            sr += *m.recall;
            ++nr;
        }
        if (tp + fp + fn > 0) {
            m.jaccard = 100.0 * tp / static_cast<double>(tp + fp + fn);
            sj += *m.jaccard;
            ++nj;
        }
    }
    r.macro_precision = np ? sp / np : 0.0;
    r.macro_recall = nr ? sr / nr : 0.0;
    r.macro_jaccard = nj ? sj / nj : 0.0;
    return r;
}

// labels/preds: 1 = ineffective (positive), 0 = effective; restricted by the
// caller to Knotting-phase frames.
inline void compute_effectiveness_metrics(const std::vector<int>& labels,
                                          const std::vector<int>& preds, MetricReport& r) {
    if (labels.empty()) {
        r.eff_defined = false;
        return;
    }
    if (labels.size() != preds.size()) throw InputError("metrics: effectiveness size mismatch");
    long tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1 && preds[i] == 1) ++tp;
        if (labels[i] == 0 && preds[i] == 1) ++fp;
        if (labels[i] == 1 && preds[i] == 0) ++fn;
        if (labels[i] == preds[i]) ++correct;
    }
    r.eff_defined = true;
    r.eff_accuracy = 100.0 * correct / static_cast<double>(labels.size());
    r.eff_precision = tp + fp > 0 ? 100.0 * tp / static_cast<double>(tp + fp) : 0.0;
    r.eff_recall = tp + fn > 0 ? 100.0 * tp / static_cast<double>(tp + fn) : 0.0;
    r.eff_jaccard = tp + fp + fn > 0 ? 100.0 * tp / static_cast<double>(tp + fp + fn) : 0.0;
}

inline void print_metric_table(const MetricReport& r, std::ostream& out) {
    auto fmt = [](const std::optional<double>& v) {
        if (!v) return std::string("   -  ");
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%6.2f", *v);
        return std::string(buf);
    };
    out << "phase            precision  recall  jaccard\n";
    for (int j = 0; j < kNumPhases; ++j) {
        char name[24];
        std::snprintf(name, sizeof(name), "%-16s", kPhaseNames[j]);
        out << name << "    " << fmt(r.per_phase[j].precision) << "  " << fmt(r.per_phase[j].recall)
            << "  " << fmt(r.per_phase[j].jaccard) << "\n";
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "macro               %6.2f  %6.2f   %6.2f\n",
                  r.macro_precision, r.macro_recall, r.macro_jaccard);
    out << buf;
    std::snprintf(buf, sizeof(buf), "frame accuracy      %6.2f\n", r.accuracy);
    out << buf;
    if (r.eff_defined) {
        std::snprintf(buf, sizeof(buf),
                      "effectiveness (Knotting frames, positive=ineffective): P %.2f R %.2f Acc "
                      "%.2f J %.2f\n",
                      r.eff_precision, r.eff_recall, r.eff_accuracy, r.eff_jaccard);
        out << buf;
    } else {
        out << "effectiveness: undefined (no Knotting frames in split)\n";
    }
}

// Line-delimited records: "name phase value", value "undef" when undefined.
inline void write_metric_records(const MetricReport& r, std::ostream& out) {
    auto line = [&](const std::string& name, const std::string& phase,
                    const std::optional<double>& v) {
        out << name << " " << phase << " ";
        if (v)
            out << *v;
        else
            out << "undef";
        out << "\n";
    };
    for (int j = 0; j < kNumPhases; ++j) {
        line("precision", kPhaseNames[j], r.per_phase[j].precision);
        line("recall", kPhaseNames[j], r.per_phase[j].recall);
        line("jaccard", kPhaseNames[j], r.per_phase[j].jaccard);
    }
    line("macro_precision", "-", r.macro_precision);
    line("macro_recall", "-", r.macro_recall);
    line("macro_jaccard", "-", r.macro_jaccard);
    line("accuracy", "-", r.accuracy);
    line("eff_precision", "-", r.eff_defined ? std::optional<double>(r.eff_precision) : std::nullopt);
    line("eff_recall", "-", r.eff_defined ? std::optional<double>(r.eff_recall) : std::nullopt);
    line("eff_accuracy", "-", r.eff_defined ? std::optional<double>(r.eff_accuracy) : std::nullopt);
    line("eff_jaccard", "-", r.eff_defined ? std::optional<double>(r.eff_jaccard) : std::nullopt);
}

}  // namespace pmnet

#endif  // PMNET_METRICS_HPP
