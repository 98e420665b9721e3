// bondsim: scenario runner for the jump-diffusion bond market library.
//
//   bondsim run --config scenarios/hedge_two_atoms.json --out-dir out
//   bondsim sweep --config scenarios/hedge_two_atoms.json
//   bondsim validate --config my.json
//   bondsim list-scenarios --dir scenarios
//
// Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 inconclusive verdict
// under --require-verdict, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bondcomp/experiments.hpp"

namespace fs = std::filesystem;
using namespace bondcomp;

namespace {

struct Flags {
  std::string config;
  std::size_t jobs = 1;
  std::string out_dir = "out";
  bool require_verdict = false;
  std::uint64_t seed_offset = 0;
  std::optional<std::size_t> dump_path;
  std::optional<std::size_t> levels;
};

int finish(const Scenario& s, const RunResult& r, const Flags& f, const std::string& suffix = "") {
  const auto path = write_outputs(s, r, f.out_dir, suffix);
  std::cout << path.string() << "\n";
  if (r.verdict) std::cout << "verdict: " << *r.verdict << "\n";
  if (f.require_verdict) {
    if (!r.verdict) {
      std::cerr << "--require-verdict: experiment produces no verdict\n";
      return 4;
    }
    if (*r.verdict != "divergent") return 4;
  }
  return 0;
}

Scenario load(const Flags& f) {
  auto s = load_scenario_file(f.config);
  if (f.dump_path) s.dump_path = f.dump_path;
  return s;
}

struct Entry {
  std::string file;
  std::string name;
  std::string experiment;
};

std::vector<Entry> scan(const std::string& dir) {
  std::vector<Entry> out;
  if (!fs::is_directory(dir)) throw ConfigError("--dir", "not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    const auto j = read_json_file(e.path().string());
    out.push_back({e.path().filename().string(), j.value("name", "?"), j.value("experiment", "?")});
  }
  std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return a.file < b.file; });
  return out;
}

// Markdown page documenting every config key and its default.
void write_reference(std::ostream& os) {
  os << R"(# Scenario configuration reference

Scenarios are JSON documents. Unknown keys are ignored; every validation failure
names the offending field path and exits with code 2.

| key | type | default | meaning |
|---|---|---|---|
| `name` | string | required | scenario id, used for output file names |
| `experiment` | string | required | `hedge_backtest`, `martingale_check`, `concentration_probe`, `discrete_probe`, `isometry_check` |
| `horizon` | number > 0 | required | last maturity T* |
| `grid.maturity_cells` | int >= 1 | required | uniform maturity grid with this many cells on [0, T*] |
| `grid.tradeable` | `"dyadic"` or list of maturities | `"dyadic"` | tradeable set J; listed maturities must be grid points |
| `grid.n_steps` | int >= 1 | required | Euler steps over the simulation horizon |
| `grid.sim_horizon` | number in (0, T*] | T* | simulated time span |
| `grid.quad_points` | int >= 2 | 64 | trapezoid subintervals for S, G, A in the probes |
| `initial_forward.level` | number | required | f(0, T) = level + slope T |
| `initial_forward.slope` | number | 0 | |
| `sigma.type` | `zero`, `constant`, `exp_decay` | required | sigma(t,T) = value, or value exp(-lambda (T - t)) |
| `sigma.value`, `sigma.lambda` | number | | |
| `gamma.type` | `zero`, `linear`, `mark_decay`, `saturating` | required | jump loading gamma(t,x,T) |
| `gamma.coeff` | curve (as `sigma`) | | `linear`: gamma = coeff(t,T) x |
| `gamma.value`, `gamma.kappa` | number | | `mark_decay`: value exp(-kappa abs(x)); `saturating`: value x / (1 + abs(x)) |
| `levy.type` | `finite_atoms`, `discrete_atoms`, `discrete_family`, `uniform` | required | Levy measure |
| `levy.atoms` | list of `{x, mass}` | | atom measures; `discrete_atoms` sorted by abs(x) |
| `levy.tail_bound` | number >= 0 | | `discrete_atoms`: bound on the omitted mass |
| `levy.count`, `levy.scale` | int, number | scale 1 | `discrete_family`: atoms x_i = scale i, i = 1..count |
| `levy.masses` | `{type: power, exponent}`, `{type: geometric, ratio}`, `{type: exponential, rate}` | | i^-p, ratio^(i-1), exp(-rate i); tail bound computed in closed form |
| `levy.lo`, `levy.hi`, `levy.intensity` | number | | `uniform`: density intensity / (hi - lo) on [lo, hi] |
| `levy.concentration_point` | number | (lo + hi) / 2 | |
| `levy.grid_points` | int >= 2 | 4096 | quadrature and sampling resolution |
| `claim.type` | `bond`, `constant`, `zero`, `random_bounded`, `oscillating`, `sqrt_thin_atoms`, `constant_one`, `exponential` | | |
| `claim.maturity` | grid maturity | | `bond`: X = Phat(T*, T0) |
| `claim.x0`, `claim.phi`, `claim.psi` | number | 0 | `constant` integrands; `oscillating` uses `x0` and `eps` |
| `claim.g_tilde`, `claim.epsilon` | number > 0 | | `exponential` |
| `claim.stopping.k0` | number > 0 | none | stop the jump integral on leaving (-k0, k0) |
| `seeds.base` | int >= 0 | required | base seed; path i uses a seed derived from (base + offset, i) |
| `seeds.paths` | int | 0 | Monte Carlo paths |
| `hedge.rank_tol` | number | 1e-10 | relative singular value cutoff in column selection |
| `hedge.condition_threshold` | number | 1e8 | re-select columns above this condition number |
| `probe.x0`, `probe.eps` | number, `{rule: harmonic/geometric/explicit, scale, ratio, radii}` | | concentration point and radii |
| `probe.depth` | int | 40 (concentration), all atoms (discrete) | number of pair tests or probed atoms |
| `probe.threshold` | number | 1e6 | certification threshold |
| `probe.psi` | `oscillating` or `linear` | `oscillating` | concentration probe integrand |
| `probe.kind` | `G_nonpositive`, `G_to_zero`, `G_to_alpha`, `G_linear_bounded` | | omitted with `finite_atoms`: complete-case control |
| `probe.g_tilde`, `probe.epsilon` | number | 1, 0.5 | `G_linear_bounded` |
| `probe.probes` | int | 100 | random tests in the complete-case control |
| `sweep.levels` | int >= 2 | 3 | halvings of dt in `sweep` |
| `output.csv` | bool | true | write CSV detail files |
| `output.dump_path` | int | none | also dump this path's curve as CSV |

Outputs go to `--out-dir`: `<name>.summary.json` (with `schema_version`,
`config_hash` and a `generated_at` timestamp) and `<name>.<table>.csv`, whose first
line is `# schema_version=1 config_hash=<hash>`.
)";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Jump-diffusion HJM bond market: hedging and completeness experiments"};
  app.require_subcommand(1);
  Flags f;
  std::string dir = "scenarios";
  std::string reference;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "scenario file (JSON)")->required();
    sub->add_option("--jobs", f.jobs, "worker threads (0: all cores)");
    sub->add_option("--out-dir", f.out_dir, "output directory");
    sub->add_flag("--require-verdict", f.require_verdict, "exit 4 unless the probe certifies divergence");
    sub->add_option("--seed-offset", f.seed_offset, "added to seeds.base");
    sub->add_option("--dump-path", f.dump_path, "dump one path's curve as CSV");
  };
  auto* run = app.add_subcommand("run", "run one scenario");
  add_common(run);
  auto* sweep = app.add_subcommand("sweep", "repeat a scenario halving dt per level");
  add_common(sweep);
  sweep->add_option("--levels", f.levels, "refinement levels (default sweep.levels)");
  auto* validate = app.add_subcommand("validate", "parse and validate a scenario");
  validate->add_option("--config", f.config, "scenario file (JSON)")->required();
  auto* list = app.add_subcommand("list-scenarios", "list scenario files");
  list->add_option("--dir", dir, "scenario directory");
  list->add_option("--reference", reference, "write the config reference page to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunOptions opts{f.jobs, f.seed_offset};
    if (*run) {
      const auto s = load(f);
      return finish(s, run_scenario(s, opts), f);
    }
    if (*sweep) {
      const auto s = load(f);
      const auto r = refine_sweep(s, opts, f.levels.value_or(s.sweep_levels));
      return finish(s, r, f, ".sweep");
    }
    if (*validate) {
      const auto s = load(f);
      std::cout << s.name << ": ok (" << to_string(s.experiment) << ", config_hash " << hex64(config_hash(s.config))
                << ")\n";
      return 0;
    }
    if (*list) {
      if (!reference.empty()) {
        std::ofstream out(reference);
        write_reference(out);
        std::cout << reference << "\n";
        return 0;
      }
      for (const auto& e : scan(dir)) std::cout << e.file << "\t" << e.name << "\t" << e.experiment << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
