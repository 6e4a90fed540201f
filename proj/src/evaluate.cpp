#include "certgap/evaluate.hpp"

#include <numeric>
#include <stdexcept>

#include "certgap/coap.hpp"
#include "certgap/interval.hpp"

namespace certgap {

std::string to_string(EvalMode mode) {
    switch (mode) {
        case EvalMode::Pgd: return "pgd";
        case EvalMode::Exact: return "exact";
        case EvalMode::CertifiedCoap: return "certified-coap";
        case EvalMode::CertifiedIbp: return "certified-ibp";
    }
    return "unknown";
}

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "pgd") return EvalMode::Pgd;
    if (s == "exact") return EvalMode::Exact;
    if (s == "certified-coap" || s == "coap") return EvalMode::CertifiedCoap;
    if (s == "certified-ibp" || s == "ibp") return EvalMode::CertifiedIbp;
    throw std::invalid_argument("unknown evaluation mode: " + s);
}

namespace {

bool robust_failure(const DenseNet& net, const Vec& x, int y, const ThreatModel& tm, EvalMode mode,
                    const AttackConfig& attack, std::size_t index) {
    switch (mode) {
        case EvalMode::Pgd: {
            AttackConfig a = attack;
            a.seed = derive_seed(attack.seed, index);
            return pgd_search(net, x, y, tm, a).misclassified;
        }
        case EvalMode::Exact: return line_search_attack(net, x, y, tm).misclassified;
        case EvalMode::CertifiedCoap: return !coap_certify(net, x, y, tm);
        case EvalMode::CertifiedIbp: return !ibp_certify(net, x, y, tm);
    }
    return true;
}

void check_inputs(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode) {
    tm.validate();
    if (mode == EvalMode::Exact && tm.kind != ThreatKind::Signal) {
        throw std::invalid_argument("exact evaluation requires a signal threat model");
    }
    if (data.size() > 0 && static_cast<int>(data.dim()) != net.input_dim()) {
        throw std::invalid_argument("evaluate: input dimension mismatch");
    }
}

}  // namespace

std::vector<char> standard_failures(const DenseNet& net, const LabeledSet& data) {
    const auto n = static_cast<long>(data.size());
    std::vector<char> flags(data.size(), 0);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        flags[u] = is_correct(forward(net, data.row(u)), data.labels[u]) ? 0 : 1;
    }
    return flags;
}

std::vector<char> standard_failures_serial(const DenseNet& net, const LabeledSet& data) {
    std::vector<char> flags(data.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        flags[i] = is_correct(forward(net, data.row(i)), data.labels[i]) ? 0 : 1;
    }
    return flags;
}

std::vector<char> robust_failures(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode,
                                  const AttackConfig& attack) {
    check_inputs(net, data, tm, mode);
    const auto n = static_cast<long>(data.size());
    std::vector<char> flags(data.size(), 0);
#pragma omp parallel for schedule(dynamic, 16)
    for (long i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        flags[u] = robust_failure(net, data.row(u), data.labels[u], tm, mode, attack, u) ? 1 : 0;
    }
    return flags;
}

std::vector<char> robust_failures_serial(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm,
                                         EvalMode mode, const AttackConfig& attack) {
    check_inputs(net, data, tm, mode);
    std::vector<char> flags(data.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        flags[i] = robust_failure(net, data.row(i), data.labels[i], tm, mode, attack, i) ? 1 : 0;
    }
    return flags;
}

double failure_rate(const std::vector<char>& flags) {
    if (flags.empty()) return 0.0;
    const long total = std::accumulate(flags.begin(), flags.end(), 0L);
    return static_cast<double>(total) / static_cast<double>(flags.size());
}

EvalResult evaluate(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode,
                    const AttackConfig& attack) {
    const auto robust = robust_failures(net, data, tm, mode, attack);
    return {failure_rate(standard_failures(net, data)), failure_rate(robust)};
}

EvalResult evaluate_serial(const DenseNet& net, const LabeledSet& data, const ThreatModel& tm, EvalMode mode,
                           const AttackConfig& attack) {
    const auto robust = robust_failures_serial(net, data, tm, mode, attack);
    return {failure_rate(standard_failures_serial(net, data)), failure_rate(robust)};
}

}  // namespace certgap
