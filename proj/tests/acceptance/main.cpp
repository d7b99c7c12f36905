// Acceptance runner: one PASS/FAIL line per criterion.
//
//   deco_acceptance            all criteria
//   deco_acceptance 1 5        selected criteria
//
// The summary lines are also written to ./acceptance_summary.txt.

#include <fnmatch.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace {

struct Criterion {
    int id;
    std::string name;
    std::vector<std::string> patterns;  // gtest full names, fnmatch syntax
    double limit_seconds;               // 0 = no limit
    std::size_t min_tests;
};

const std::vector<Criterion> kCriteria = {
    {1, "gradient suite (ops + composite, 64-bit, >=10 seeds)",
     {"Seeds/GradientCheck.*", "DecoGradCheck.*", "CompositeGradCheck.*", "Backward.*"}, 120, 100},
    {2, "oracle suite (conv / maxpool / transposed conv, adjoint)",
     {"Conv2d.*", "TransposedConv2d.*", "MaxPool.*"}, 0, 10},
    {3, "mapping suite (colorjet, normals, median fill, unit norm)",
     {"Grayscale.*", "ColorJet.*", "Normals.*", "MedianFill.*", "SurfaceNormalsPP.*"}, 0, 10},
    {4, "shape law (full blocks x filters grid, S in {16,32,64,228})", {"AcceptanceShapeLaw.*"}, 300, 1},
    {5, "protocol invariants (freeze contracts, logged lr schedules)",
     {"AcceptanceProtocol.*", "BackboneFreeze.*", "Phase1.FreezeContractAndLearningRateLog",
      "Phase2.TrainsOnlyTheNewHead", "Finetune.GuardsAndFreezeContract", "LrSchedule.*",
      "Optimizer.FrozenParameterIsBitwiseUnchanged"},
     0, 5},
    {6, "desk-scale learning gates a/b/c", {"AcceptanceLearning.*"}, 0, 3},
    {7, "fusion (endpoints, shift invariance, alpha cross-validation)", {"Fusion.*", "CrossValidation.*"}, 0, 3},
    {8, "determinism (byte-identical reruns, bitwise checkpoints)",
     {"AcceptanceDeterminism.*", "Phase1.Deterministic", "Pretrain.DeterministicAndGated",
      "Synth.SameSeedGivesIdenticalFiles"},
     0, 2},
    {9, "comparison harness parity (one backbone hash per report)",
     {"AcceptanceHarness.*", "Harness.MappingsShareTheDownstreamPath"}, 0, 2},
};

bool matches(const Criterion& c, const std::string& full_name) {
    for (const std::string& p : c.patterns)
        if (::fnmatch(p.c_str(), full_name.c_str(), 0) == 0) return true;
    return false;
}

struct Outcome {
    std::size_t run = 0;
    std::size_t failed = 0;
    double seconds = 0;
    std::vector<std::string> failures;
};

class Collector : public ::testing::EmptyTestEventListener {
public:
    explicit Collector(const std::vector<const Criterion*>& selected) : selected_(selected), outcomes_(selected.size()) {}

    void OnTestStart(const ::testing::TestInfo& info) override {
        std::cout << "[ run ] " << info.test_suite_name() << "." << info.name() << std::endl;
    }

    void OnTestPartResult(const ::testing::TestPartResult& r) override {
        if (r.failed())
            std::cout << (r.file_name() ? r.file_name() : "?") << ":" << r.line_number() << ": " << r.summary()
                      << std::endl;
    }

    void OnTestEnd(const ::testing::TestInfo& info) override {
        const std::string name = std::string(info.test_suite_name()) + "." + info.name();
        const bool ok = info.result()->Passed() && !info.result()->Skipped();
        const double s = double(info.result()->elapsed_time()) / 1000.0;
        for (std::size_t i = 0; i < selected_.size(); ++i) {
            if (!matches(*selected_[i], name)) continue;
            Outcome& o = outcomes_[i];
            ++o.run;
            o.seconds += s;
            if (!ok) {
                ++o.failed;
                o.failures.push_back(name);
            }
        }
    }

    const std::vector<Outcome>& outcomes() const { return outcomes_; }

private:
    std::vector<const Criterion*> selected_;
    std::vector<Outcome> outcomes_;
};

}  // namespace

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);

    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    std::vector<const Criterion*> selected;
    std::string filter;
    for (const Criterion& c : kCriteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        selected.push_back(&c);
        for (const std::string& p : c.patterns) filter += (filter.empty() ? "" : ":") + p;
    }
    if (selected.empty()) {
        std::cerr << "no criterion selected (valid: 1-" << kCriteria.size() << ")\n";
        return 2;
    }
    ::testing::GTEST_FLAG(filter) = filter;

    auto& listeners = ::testing::UnitTest::GetInstance()->listeners();
    delete listeners.Release(listeners.default_result_printer());
    auto* collector = new Collector(selected);
    listeners.Append(collector);

    (void)RUN_ALL_TESTS();

    bool all = true;
    std::string summary;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        const Criterion& c = *selected[i];
        const Outcome& o = collector->outcomes()[i];
        std::string why;
        if (o.failed) why = std::to_string(o.failed) + " failing: " + o.failures.front();
        else if (o.run < c.min_tests) why = "only " + std::to_string(o.run) + " tests matched";
        else if (c.limit_seconds > 0 && o.seconds >= c.limit_seconds) why = "over the time limit";
        const bool pass = why.empty();
        all = all && pass;
        char timing[96];
        if (c.limit_seconds > 0)
            std::snprintf(timing, sizeof timing, "%.1f s, limit %.0f s", o.seconds, c.limit_seconds);
        else
            std::snprintf(timing, sizeof timing, "%.1f s", o.seconds);
        summary += std::string(pass ? "PASS" : "FAIL") + "  [" + std::to_string(c.id) + "] " + c.name + " (" +
                   std::to_string(o.run) + " tests, " + timing + ")" + (pass ? "" : " -- " + why) + "\n";
    }
    std::cout << "\nacceptance:\n" << summary;
    std::ofstream("acceptance_summary.txt") << summary;
    return all ? 0 : 1;
}
