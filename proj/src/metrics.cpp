#include "rgame/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <thread>

namespace rgame {

double hamming_norm(const RuleVector& a, const RuleVector& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("hamming_norm: rule vector lengths differ");
    int diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a.rules[i] == b.rules[i])) ++diff;
    return static_cast<double>(diff) / static_cast<double>(a.size());
}

int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

int levenshtein(const Message& a, const Message& b) {
    return levenshtein(a.tokens, b.tokens);
}

double panel_cosine(const std::vector<Panel>& a, const std::vector<Panel>& b,
                    int cardinality) {
    if (a.size() != b.size())
        throw std::invalid_argument("panel_cosine: panel counts differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        if (a[p].size() != b[p].size())
            throw std::invalid_argument("panel_cosine: attribute counts differ");
        for (std::size_t i = 0; i < a[p].size(); ++i) {
            const double x =
                static_cast<double>(a[p].values[i]) / static_cast<double>(cardinality);
            const double y =
                static_cast<double>(b[p].values[i]) / static_cast<double>(cardinality);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// Regularized incomplete beta via the standard continued fraction.
double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    const int max_iter = 300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-12) break;
    }
    return h;
}

double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// Two-sided p for a t statistic with df degrees of freedom.
double t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    const double x = df / (df + t * t);
    return incbeta(df / 2.0, 0.5, x);
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    const std::size_t n = xs.size();
    if (n < 3) throw std::invalid_argument("spearman: need at least 3 points");
    const std::vector<double> rx = average_ranks(xs);
    const std::vector<double> ry = average_ranks(ys);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw ZeroVariance("spearman: a sequence has constant ranks");
    SpearmanResult out;
    out.rho = sxy / (std::sqrt(sxx) * std::sqrt(syy));
    const double df = static_cast<double>(n - 2);
    const double denom = 1.0 - out.rho * out.rho;
    if (denom <= 0.0) {
        out.p_value = 0.0;
    } else {
        const double t = out.rho * std::sqrt(df / denom);
        out.p_value = t_two_sided_p(t, df);
    }
    return out;
}

std::string combo_key(const RuleVector& rv) {
    std::string key;
    for (std::size_t i = 0; i < rv.size(); ++i) {
        if (i) key += "|";
        key += display_name(rv.rules[i]);
    }
    return key;
}

LanguageDump dump_language(Speaker& speaker, const std::vector<Problem>& problems,
                           const ChannelConfig& cfg) {
    LanguageDump dump;
    dump.records.reserve(problems.size());
    Rng rng(0);  // greedy mode draws nothing
    std::map<std::string, std::map<std::vector<int>, std::size_t>> counts;
    for (const Problem& p : problems) {
        SpeakerView view{p.contexts};
        Message m = speaker.speak(view, EpisodeMode::greedy, rng);
        validate_message(m, cfg);
        counts[combo_key(p.rule_vector)][m.tokens] += 1;
        dump.records.push_back({p.rule_vector, p.contexts, std::move(m)});
    }
    for (const auto& [key, by_msg] : counts) {
        // Modal message; ties resolve to the lexicographically smallest.
        const std::vector<int>* best = nullptr;
        std::size_t best_count = 0;
        for (const auto& [tokens, c] : by_msg)
            if (c > best_count) {
                best = &tokens;
                best_count = c;
            }
        dump.combo_messages[key] = Message{*best};
    }
    return dump;
}

TopsimReport topsim(const LanguageDump& dump, TopsimSpace space, std::size_t sample_n,
                    int runs, int cardinality, Rng& rng) {
    if (runs < 1) throw std::invalid_argument("topsim: need at least one run");
    if (dump.records.size() < 2)
        throw std::invalid_argument("topsim: need at least two records");
    TopsimReport report;
    report.space = space;
    report.sample_n = std::min(sample_n, dump.records.size());

    std::vector<std::size_t> idx(dump.records.size());
    for (int run = 0; run < runs; ++run) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        // Partial Fisher-Yates: the first sample_n entries are the sample.
        for (std::size_t i = 0; i < report.sample_n; ++i) {
            const std::size_t j = i + rng.uniform_below(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<double> din, dmsg;
        const std::size_t pairs = report.sample_n * (report.sample_n - 1) / 2;
        din.reserve(pairs);
        dmsg.reserve(pairs);
        for (std::size_t i = 0; i < report.sample_n; ++i) {
            const LanguageDump::Record& a = dump.records[idx[i]];
            for (std::size_t j = i + 1; j < report.sample_n; ++j) {
                const LanguageDump::Record& b = dump.records[idx[j]];
                din.push_back(space == TopsimSpace::rule
                                  ? hamming_norm(a.rules, b.rules)
                                  : panel_cosine(a.contexts, b.contexts, cardinality));
                dmsg.push_back(static_cast<double>(levenshtein(a.message, b.message)));
            }
        }
        TopsimRun r;
        try {
            const SpearmanResult s = spearman(din, dmsg);
            r.rho = s.rho;
            r.p_value = s.p_value;
        } catch (const ZeroVariance&) {
            r.valid = false;
        }
        report.runs.push_back(r);
    }

    double sum = 0.0;
    for (const TopsimRun& r : report.runs)
        if (r.valid) {
            sum += r.rho;
            ++report.valid_runs;
        }
    if (report.valid_runs > 0) report.mean_rho = sum / static_cast<double>(report.valid_runs);
    if (report.valid_runs > 1) {
        double ss = 0.0;
        for (const TopsimRun& r : report.runs)
            if (r.valid) ss += (r.rho - report.mean_rho) * (r.rho - report.mean_rho);
        report.stderr_rho = std::sqrt(ss / static_cast<double>(report.valid_runs - 1)) /
                            std::sqrt(static_cast<double>(report.valid_runs));
    }
    return report;
}

std::vector<SplitAccuracy> generalization_report(Speaker& speaker, Listener& listener,
                                                 const DatasetManifest& manifest,
                                                 const std::string& dir,
                                                 const ChannelConfig& cfg,
                                                 const std::vector<std::string>& splits,
                                                 std::uint64_t seed) {
    std::vector<SplitAccuracy> out;
    for (const std::string& name : splits) {
        const std::vector<Problem> problems = load_split(manifest, dir, name);
        if (problems.empty()) throw DatasetError("split " + name + " is empty");
        Rng rng(derive_seed(seed, {fnv1a_str(name)}));
        const BatchResult r =
            run_batch(speaker, listener, problems, EpisodeMode::greedy, cfg, rng);
        out.push_back({name, r.accuracy, problems.size()});
    }
    return out;
}

BlockedAudit message_blocked_audit(const ModelConfig& listener_cfg,
                                   const std::vector<Problem>& train,
                                   const TrainConfig& cfg) {
    Rng init(derive_seed(cfg.seed, {fnv1a_str("blocked_init")}));
    ListenerParams lp(listener_cfg, init);
    BlockedAudit out;
    out.curve = train_listener_blocked(lp, train, cfg);
    out.final_train_accuracy =
        evaluate_listener_blocked(lp, train, derive_seed(cfg.seed, {fnv1a_str("blocked_eval")}));
    return out;
}

EtlReport etl_transfer(const std::map<std::string, Message>& source_language,
                       const std::vector<Problem>& target_problems,
                       const ModelConfig& listener_cfg, const OracleCodebook& rule_codebook,
                       const TrainConfig& cfg) {
    if (target_problems.empty())
        throw std::invalid_argument("etl: empty target problem set");

    std::vector<Message> agent_msgs, rule_msgs;
    agent_msgs.reserve(target_problems.size());
    rule_msgs.reserve(target_problems.size());
    std::vector<std::string> missing;
    for (const Problem& p : target_problems) {
        const std::string key = combo_key(p.rule_vector);
        const auto it = source_language.find(key);
        if (it == source_language.end()) {
            if (std::find(missing.begin(), missing.end(), key) == missing.end())
                missing.push_back(key);
        } else {
            agent_msgs.push_back(it->second);
        }
        rule_msgs.push_back(rule_codebook.encode(p.rule_vector));
    }
    if (!missing.empty()) {
        std::string what = "source language missing " +
                           std::to_string(missing.size()) + " combos:";
        for (const std::string& k : missing) what += " " + k;
        throw MappingIncomplete(what);
    }

    // Shuffled control: the same message inventory under a permuted mapping.
    std::vector<std::string> keys;
    std::vector<Message> values;
    for (const auto& [k, v] : source_language) {
        keys.push_back(k);
        values.push_back(v);
    }
    Rng shuffle_rng(derive_seed(cfg.seed, {fnv1a_str("etl_shuffle")}));
    shuffle_rng.shuffle(values);
    std::map<std::string, Message> shuffled;
    for (std::size_t i = 0; i < keys.size(); ++i) shuffled[keys[i]] = values[i];
    std::vector<Message> random_msgs;
    random_msgs.reserve(target_problems.size());
    for (const Problem& p : target_problems)
        random_msgs.push_back(shuffled.at(combo_key(p.rule_vector)));

    struct Job {
        const char* name;
        const std::vector<Message>* msgs;
        std::uint64_t salt;
        EtlArm* out;
    };
    EtlReport report;
    report.agent.name = "agent";
    report.rule.name = "rule";
    report.random.name = "random";
    const Job jobs[] = {
        {"agent", &agent_msgs, fnv1a_str("etl_agent"), &report.agent},
        {"rule", &rule_msgs, fnv1a_str("etl_rule"), &report.rule},
        {"random", &random_msgs, fnv1a_str("etl_random"), &report.random},
    };

    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(3);
    for (std::size_t j = 0; j < 3; ++j) {
        threads.emplace_back([&, j] {
            try {
                const Job& job = jobs[j];
                TrainConfig arm_cfg = cfg;
                arm_cfg.seed = derive_seed(cfg.seed, {job.salt});
                Rng init(derive_seed(arm_cfg.seed, {fnv1a_str("init")}));
                ListenerParams lp(listener_cfg, init);
                job.out->curve =
                    train_listener_on_messages(lp, target_problems, *job.msgs, arm_cfg);
                job.out->final_accuracy = evaluate_listener_on_messages(
                    lp, target_problems, *job.msgs,
                    derive_seed(arm_cfg.seed, {fnv1a_str("eval")}));
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    }
    for (std::thread& t : threads) t.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
    return report;
}

TokenTable token_distribution(const LanguageDump& dump, const RuleRegistry& registry,
                              int attribute_count, const ChannelConfig& cfg) {
    // Recover per-attribute rule names from the combo keys.
    std::vector<std::pair<std::vector<std::string>, const Message*>> combos;
    for (const auto& [key, msg] : dump.combo_messages) {
        std::vector<std::string> names;
        std::size_t at = 0;
        while (at <= key.size()) {
            const std::size_t bar = key.find('|', at);
            if (bar == std::string::npos) {
                names.push_back(key.substr(at));
                break;
            }
            names.push_back(key.substr(at, bar - at));
            at = bar + 1;
        }
        if (static_cast<int>(names.size()) != attribute_count)
            throw std::invalid_argument("token table: combo key arity mismatch: " + key);
        combos.emplace_back(std::move(names), &msg);
    }

    TokenTable table;
    const auto positions = static_cast<std::size_t>(cfg.max_message_length);
    for (int a = 0; a < attribute_count; ++a) {
        for (const Rule& r : registry.rules) {
            const std::string rule_name = display_name(r);
            std::vector<std::map<int, std::size_t>> counts(positions);
            std::size_t support = 0;
            for (const auto& [names, msg] : combos) {
                if (names[static_cast<std::size_t>(a)] != rule_name) continue;
                ++support;
                for (std::size_t t = 0; t < msg->tokens.size() && t < positions; ++t)
                    counts[t][msg->tokens[t]] += 1;
            }
            if (support == 0) {
                table.absent.push_back("(" + std::to_string(a) + ", " + rule_name + ")");
                continue;
            }
            TokenTableRow row;
            row.attribute = a;
            row.rule = rule_name;
            row.support = support;
            for (std::size_t t = 0; t < positions; ++t) {
                int best = -1;
                std::size_t best_count = 0;
                for (const auto& [tok, c] : counts[t])
                    if (c > best_count) {
                        best = tok;
                        best_count = c;
                    }
                row.argmax_token.push_back(best);
            }
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

void write_token_table_csv(const std::string& path, const TokenTable& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open token table file: " + path);
    out << "attribute,rule,support";
    std::size_t positions = 0;
    for (const TokenTableRow& r : table.rows)
        positions = std::max(positions, r.argmax_token.size());
    for (std::size_t t = 0; t < positions; ++t) out << ",pos" << t;
    out << "\n";
    for (const TokenTableRow& r : table.rows) {
        out << r.attribute << "," << r.rule << "," << r.support;
        for (int tok : r.argmax_token) out << "," << tok;
        out << "\n";
    }
}

void write_topsim_csv(const std::string& path, const TopsimReport& rule_space,
                      const TopsimReport& panel_space) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open topsim file: " + path);
    out << "space,run,rho,p_value,valid\n" << std::setprecision(12);
    const TopsimReport* reports[] = {&rule_space, &panel_space};
    for (const TopsimReport* rep : reports) {
        const char* label = rep->space == TopsimSpace::rule ? "rule" : "panel";
        for (std::size_t i = 0; i < rep->runs.size(); ++i)
            out << label << "," << i << "," << rep->runs[i].rho << ","
                << rep->runs[i].p_value << "," << (rep->runs[i].valid ? 1 : 0) << "\n";
        out << label << ",mean," << rep->mean_rho << "," << rep->stderr_rho << ","
            << rep->valid_runs << "\n";
    }
}

}  // namespace rgame
