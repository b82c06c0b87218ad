// Acceptance suite: one PASS/FAIL line per criterion; exit status 0 iff all pass.

#include <cstdlib>
#include <iostream>
#include <string>

#include "itnas/acceptance/acceptance.hpp"

int main(int argc, char** argv) {
    itnas::acceptance::AcceptanceOptions options;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--work-dir" && i + 1 < argc) {
            options.work_dir = argv[++i];
        } else {
            options.only.push_back(std::atoi(argv[i]));
        }
    }
    int failed = 0;
    const auto results = itnas::acceptance::run_acceptance(
        options, [&](const itnas::acceptance::CriterionResult& r) {
            std::cout << itnas::acceptance::format_result(r) << std::endl;
            failed += r.passed ? 0 : 1;
        });
    std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
