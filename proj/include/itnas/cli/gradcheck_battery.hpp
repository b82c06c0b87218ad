#ifndef ITNAS_CLI_GRADCHECK_BATTERY_HPP
#define ITNAS_CLI_GRADCHECK_BATTERY_HPP

#include <string>
#include <vector>

namespace itnas::cli {

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckItem {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    bool touches_transition = false;
    bool touches_attention = false;
};

// Finite-difference checks over every primitive, the concrete-sample path with
// frozen noise, the inner-weight derivation (transition and attention logits)
// and the full toy validation loss.
std::vector<GradcheckItem> run_gradcheck_battery();

} // namespace itnas::cli

#endif // ITNAS_CLI_GRADCHECK_BATTERY_HPP
