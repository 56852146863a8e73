#include <CLI11.hpp>
#include <set>

#include "numerics.hpp"
#include "training.hpp"

using namespace acceptance;

int main(int argc, char** argv) {
  CLI::App app{"Runs the ten acceptance criteria and prints one PASS/FAIL line for each."};
  std::vector<int> only;
  std::vector<int> allow;
  app.add_option("--only", only, "Run just these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--allow-fail", allow,
                 "Known failures: still reported as FAIL, but do not make the exit status non-zero")
      ->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end()), allowed(allow.begin(), allow.end());

  // Progress goes to stdout as well; training criteria may take minutes.
  ScopedWarningSink sink([](const std::string& m) { note("warning: " + m); });

  const std::vector<Criterion> criteria = {
      {1, "gradient integrity", gradient_integrity},
      {2, "numerical kernels", numerical_kernels},
      {3, "ppe correctness", ppe_correctness},
      {4, "static training", static_training},
      {5, "table ordering", table_ordering},
      {6, "temporal physics sensitivity", temporal_sensitivity},
      {7, "consistency identity", consistency_identity},
      {8, "geometric latent period", geometric_period},
      {9, "fusion ordering", fusion_ordering},
      {10, "mesh invariance", mesh_invariance},
  };

  std::size_t passed = 0, ran = 0, unexpected = 0;
  std::vector<std::string> lines;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++ran;
    std::cout << "criterion " << c.id << ": " << c.name << std::endl;
    Stopwatch clock;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    passed += o.pass;
    unexpected += !o.pass && !allowed.count(c.id);
    char head[96];
    std::snprintf(head, sizeof head, "%s %2d %-30s [%7.1f s] ", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                  clock.seconds());
    lines.push_back(head + o.detail);
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << passed << "/" << ran << " criteria passed";
  if (passed < ran) std::cout << " (" << ran - passed - unexpected << " of the failures listed as known)";
  std::cout << std::endl;
  return unexpected == 0 ? 0 : 1;
}
