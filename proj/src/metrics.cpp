#include "gradeflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <mutex>
#include <numeric>

#include "gradeflow/csv.hpp"

namespace gradeflow {

namespace fs = std::filesystem;

namespace {

std::string dmax_label(double d) {
    return d == std::floor(d) ? std::to_string(static_cast<long long>(d)) : format_points(d);
}

}  // namespace

DeltaSet::DeltaSet(std::vector<GradePair> p) : pairs(std::move(p)) {
    if (pairs.empty())
        throw DomainError("delta set is empty");
}

DeltaSet DeltaSet::from_deltas(const std::vector<double>& deltas) {
    std::vector<GradePair> pairs;
    for (std::size_t i = 0; i < deltas.size(); ++i)
        pairs.push_back(GradePair{"s" + std::to_string(i + 1), deltas[i], 0.0, deltas[i]});
    return DeltaSet(std::move(pairs));
}

std::vector<double> DeltaSet::deltas() const {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs)
        out.push_back(p.delta);
    return out;
}

double mad(const DeltaSet& d) {
    double sum = 0.0;
    for (const auto& p : d.pairs)
        sum += std::abs(p.delta);
    return sum / static_cast<double>(d.size());
}

double sigma_abs(const DeltaSet& d) {
    const double m = mad(d);
    double sq = 0.0;
    for (const auto& p : d.pairs) {
        const double dev = std::abs(p.delta) - m;
        sq += dev * dev;
    }
    return std::sqrt(sq / static_cast<double>(d.size()));
}

double bias(const DeltaSet& d) {
    double sum = 0.0;
    for (const auto& p : d.pairs)
        sum += p.delta;
    return sum / static_cast<double>(d.size());
}

double trigger_rate(const ScoreMatrix& m, double d_max) {
    if (m.graders() < 2)
        throw DomainError("trigger rate needs K >= 2 graders");
    if (m.students() == 0)
        throw DomainError("trigger rate needs at least one student");
    std::size_t triggered = 0;
    for (std::size_t i = 0; i < m.students(); ++i)
        if (m.range(i) >= d_max)
            ++triggered;
    return static_cast<double>(triggered) / static_cast<double>(m.students());
}

std::string Aggregate::display(int decimals) const {
    return format_fixed(round_half_up(mean, decimals), decimals) + "±" +
           format_fixed(round_half_up(std, decimals), decimals);
}

Aggregate aggregate_runs(const std::vector<double>& values) {
    if (values.empty())
        throw DomainError("aggregate_runs needs at least one value");
    Aggregate a;
    a.values = values;
    const double n = static_cast<double>(values.size());
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double sq = 0.0;
    for (double v : values)
        sq += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(sq / n);
    return a;
}

std::map<std::string, double> load_human_grades(const fs::path& path) {
    const auto rows = csv::read_file(path);
    if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "pseudo_id" || rows[0][1] != "grade")
        throw ConfigError("human grades " + path.string() + ": header must be 'pseudo_id,grade'");
    std::map<std::string, double> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() == 1 && r[0].empty())
            continue;
        if (r.size() < 2)
            throw ConfigError("human grades line " + std::to_string(i + 1) + ": expected two fields");
        double grade = 0.0;
        try {
            std::size_t used = 0;
            grade = std::stod(r[1], &used);
            if (used != r[1].size())
                throw std::invalid_argument("trailing text");
        } catch (const std::exception&) {
            throw ConfigError("human grades line " + std::to_string(i + 1) + ": grade '" + r[1] + "' is not a number");
        }
        if (grade < 0.0 || grade > 100.0)
            throw ConfigError("human grades line " + std::to_string(i + 1) + ": grade outside [0, 100]");
        const auto id = normalize_pseudo_id(r[0]);
        if (!out.emplace(id, grade).second)
            throw ConfigError("human grades: duplicate pseudo_id '" + r[0] + "'");
    }
    return out;
}

DeltaSet compare_to_human(const RunRecord& run, const std::map<std::string, double>& human) {
    std::vector<GradePair> pairs;
    std::vector<std::string> missing;
    std::vector<std::string> ungraded;
    for (const auto& s : run.students) {
        auto it = human.find(normalize_pseudo_id(s.pseudo_id));
        if (it == human.end()) {
            missing.push_back(s.pseudo_id);
            continue;
        }
        if (!s.final_total) {
            ungraded.push_back(s.pseudo_id);
            continue;
        }
        pairs.push_back(GradePair::make(s.pseudo_id, *s.final_total, it->second));
    }
    auto join = [](const std::vector<std::string>& ids) {
        std::string out;
        for (const auto& id : ids)
            out += (out.empty() ? "" : ", ") + id;
        return out;
    };
    if (!missing.empty())
        throw DomainError("no human grade for: " + join(missing));
    if (!ungraded.empty())
        throw DomainError("no automated total for: " + join(ungraded));
    return DeltaSet(std::move(pairs));
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json tr_json = nlohmann::json::object();
    for (const auto& [d, rate] : tr)
        tr_json[dmax_label(d)] = rate;
    nlohmann::json out = {{"run_index", run_index}, {"run_id", run_id}, {"n", n},
                          {"mad", mad},             {"sigma_abs", sigma_abs}, {"bias", bias},
                          {"tr", tr_json}};
    if (tr_error)
        out["tr_error"] = *tr_error;
    return out;
}

MetricsReport compute_metrics(const RunRecord& run, const std::map<std::string, double>& human,
                              const std::vector<double>& dmax, int run_index) {
    const auto deltas = compare_to_human(run, human);
    MetricsReport r;
    r.mad = mad(deltas);
    r.sigma_abs = sigma_abs(deltas);
    r.bias = bias(deltas);
    r.n = deltas.size();
    r.run_index = run_index;
    r.run_id = run.run_id;
    try {
        const auto matrix = run.score_matrix();
        for (double d : dmax)
            r.tr[d] = trigger_rate(matrix, d);
    } catch (const DomainError& e) {
        r.tr_error = e.what();
    }
    return r;
}

std::string format_rate(double rate) { return format_fixed(round_half_up(rate * 100.0, 1), 1) + "%"; }

Aggregate MetricsSummary::aggregate(const std::string& metric) const {
    std::vector<double> values;
    for (const auto& r : runs) {
        if (metric == "mad")
            values.push_back(r.mad);
        else if (metric == "sigma_abs")
            values.push_back(r.sigma_abs);
        else if (metric == "bias")
            values.push_back(r.bias);
        else
            throw DomainError("unknown metric '" + metric + "'");
    }
    return aggregate_runs(values);
}

std::optional<Aggregate> MetricsSummary::aggregate_tr(double d_max) const {
    std::vector<double> values;
    for (const auto& r : runs) {
        auto it = r.tr.find(d_max);
        if (it == r.tr.end())
            return std::nullopt;
        values.push_back(it->second * 100.0);
    }
    if (values.empty())
        return std::nullopt;
    return aggregate_runs(values);
}

namespace {

std::string triplet(const std::vector<double>& values) {
    std::string out;
    for (double v : values)
        out += (out.empty() ? "" : "/") + format_fixed(round_half_up(v, 1), 1);
    return out;
}

struct Cell {
    std::string runs;
    std::string summary;
    std::string suffix;
    std::string text() const { return runs == "n/a" ? runs : runs + " (" + summary + ")" + suffix; }
};

std::vector<Cell> row_cells(const MetricsSummary& row, const std::vector<double>& dmax) {
    std::vector<Cell> cells;
    for (const char* metric : {"mad", "sigma_abs", "bias"}) {
        if (row.runs.empty()) {
            cells.push_back({"n/a", "n/a", ""});
            continue;
        }
        const auto a = row.aggregate(metric);
        cells.push_back({triplet(a.values), a.display(), ""});
    }
    for (double d : dmax) {
        auto a = row.runs.empty() ? std::nullopt : row.aggregate_tr(d);
        if (!a)
            cells.push_back({"n/a", "n/a", ""});
        else
            cells.push_back({triplet(a->values) + "%", a->display(), "%"});
    }
    return cells;
}

std::vector<std::string> header(const std::vector<double>& dmax) {
    std::vector<std::string> h{"MAD", "sigma_abs", "Bias"};
    for (double d : dmax)
        h.push_back("TR(" + dmax_label(d) + ")");
    return h;
}

}  // namespace

std::string metrics_table_markdown(const std::vector<MetricsSummary>& rows, const std::vector<double>& dmax) {
    const auto h = header(dmax);
    std::string out = "| Regime |";
    std::string rule = "|---|";
    for (const auto& c : h) {
        out += " " + c + " |";
        rule += "---|";
    }
    out += "\n" + rule + "\n";
    for (const auto& row : rows) {
        out += "| " + row.label + " |";
        for (const auto& c : row_cells(row, dmax))
            out += " " + c.text() + " |";
        out += "\n";
    }
    for (const auto& row : rows)
        for (const auto& f : row.failed_runs)
            out += "\n" + row.label + ": " + f;
    if (out.back() != '\n')
        out += "\n";
    return out;
}

std::string metrics_table_csv(const std::vector<MetricsSummary>& rows, const std::vector<double>& dmax) {
    csv::Row head{"regime", "run_index", "run_id", "n", "mad", "sigma_abs", "bias"};
    for (double d : dmax)
        head.push_back("tr_" + dmax_label(d));
    std::string out = csv::format_row(head);
    for (const auto& row : rows)
        for (const auto& r : row.runs) {
            csv::Row line{row.label, std::to_string(r.run_index), r.run_id, std::to_string(r.n)};
            for (double v : {r.mad, r.sigma_abs, r.bias})
                line.push_back(nlohmann::json(v).dump());
            for (double d : dmax) {
                auto it = r.tr.find(d);
                line.push_back(it == r.tr.end() ? std::string() : nlohmann::json(it->second).dump());
            }
            out += csv::format_row(line);
        }
    return out;
}

nlohmann::json metrics_json(const std::vector<MetricsSummary>& rows, const std::vector<double>& dmax) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& r : row.runs)
            runs.push_back(r.to_json());
        nlohmann::json entry = {{"label", row.label}, {"runs", runs}, {"failed_runs", row.failed_runs}};
        if (!row.runs.empty()) {
            nlohmann::json agg;
            for (const char* metric : {"mad", "sigma_abs", "bias"}) {
                const auto a = row.aggregate(metric);
                agg[metric] = {{"mean", a.mean}, {"std", a.std}, {"display", a.display()}};
            }
            nlohmann::json tr = nlohmann::json::object();
            for (double d : dmax)
                if (auto a = row.aggregate_tr(d))
                    tr[dmax_label(d)] = {{"mean_percent", a->mean},
                                            {"std_percent", a->std},
                                            {"display", "(" + a->display() + ")%"}};
            agg["tr"] = tr;
            entry["aggregate"] = agg;
        }
        out.push_back(entry);
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunConfig& base,
                                const std::map<std::string, double>& human, const RunOptions& options) {
    if (config.repetitions < 1)
        throw ConfigError("experiment: R must be >= 1");
    ExperimentResult result;
    std::mutex dirs_mutex;
    for (auto regime : config.regimes) {
        MetricsSummary row;
        row.label = std::string(to_string(regime));
        auto cfg = base;
        cfg.regime = regime;
        cfg.output_dir = base.output_dir / ("experiment-" + row.label);

        auto one = [&](int r) -> std::pair<std::optional<MetricsReport>, std::string> {
            auto opts = options;
            opts.run_id = "run-" + std::to_string(r);
            try {
                const auto run = run_pipeline(cfg, opts);
                {
                    std::lock_guard lock(dirs_mutex);
                    result.run_dirs.push_back(run.run_dir);
                }
                return {compute_metrics(load_run(run.run_dir), human, config.dmax, r), {}};
            } catch (const std::exception& e) {
                return {std::nullopt, "run " + std::to_string(r) + ": " + e.what()};
            }
        };

        std::vector<std::pair<std::optional<MetricsReport>, std::string>> outcomes;
        if (config.parallel) {
            std::vector<std::future<std::pair<std::optional<MetricsReport>, std::string>>> futures;
            for (int r = 1; r <= config.repetitions; ++r)
                futures.push_back(std::async(std::launch::async, one, r));
            for (auto& f : futures)
                outcomes.push_back(f.get());
        } else {
            for (int r = 1; r <= config.repetitions; ++r)
                outcomes.push_back(one(r));
        }
        for (auto& [report, error] : outcomes) {
            if (report)
                row.runs.push_back(std::move(*report));
            else
                row.failed_runs.push_back(error);
        }
        result.rows.push_back(std::move(row));
    }
    std::sort(result.run_dirs.begin(), result.run_dirs.end());
    return result;
}

}  // namespace gradeflow
