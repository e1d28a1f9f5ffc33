#ifndef SCALESEG_CLI_HPP_
#define SCALESEG_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace scaleseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

// Subcommands: train, eval, infer, visualize, gradcheck, synth. Reports are
// JSON objects, one per line, on `out`; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

int cli_main(int argc, char** argv);

}  // namespace scaleseg

#endif  // SCALESEG_CLI_HPP_
