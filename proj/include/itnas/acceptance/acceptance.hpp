#ifndef ITNAS_ACCEPTANCE_ACCEPTANCE_HPP
#define ITNAS_ACCEPTANCE_ACCEPTANCE_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace itnas::acceptance {

// Tolerances and budgets.
inline constexpr double kSimplexTolerance = 1e-9;
inline constexpr double kFrequencyTolerance = 0.01;
inline constexpr double kRenormTolerance = 1e-12;
inline constexpr double kMinToyValAccuracy = 0.95;

struct CriterionResult {
    int id = 0;
    std::string title;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
    double budget_seconds = 0.0; // 0: no runtime limit
};

struct AcceptanceOptions {
    std::filesystem::path work_dir; // scratch space for the CLI-level criteria
    std::vector<int> only;          // empty runs every criterion
};

using Reporter = std::function<void(const CriterionResult&)>;

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const Reporter& report = {});

// "PASS [n] title: detail (1.2 s)"
std::string format_result(const CriterionResult& result);

} // namespace itnas::acceptance

#endif // ITNAS_ACCEPTANCE_ACCEPTANCE_HPP
