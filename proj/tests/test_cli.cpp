// Drives the installed binary end to end through std::system: exit codes,
// config-file/flag precedence, determinism of generated artifacts, and a
// miniature synth -> prep -> gbdt -> seq -> train -> eval -> serve chain.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& scratch() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("riskseq-cli-" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI with the given argument string, capturing exit code and both
// streams. `stdin_path`, when set, is redirected into the process.
CmdResult run_cli(const std::string& args, const std::string& stdin_path = "") {
  static int counter = 0;
  const fs::path out_path = scratch() / ("stdout." + std::to_string(counter) + ".txt");
  const fs::path err_path = scratch() / ("stderr." + std::to_string(counter) + ".txt");
  ++counter;

  std::string cmd = std::string("\"") + RISKSEQ_CLI_PATH + "\" " + args;
  if (!stdin_path.empty()) cmd += " < \"" + stdin_path + "\"";
  cmd += " > \"" + out_path.string() + "\" 2> \"" + err_path.string() + "\"";

  const int status = std::system(cmd.c_str());
  CmdResult r;
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  r.code = WEXITSTATUS(status);
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::string first_line(const std::string& s) {
  return s.substr(0, s.find('\n'));
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(bool(out));
  out << body;
}

// Flags shared by every stage of the miniature pipeline; kept small so the
// whole chain stays in the seconds range.
const std::string kTiny =
    "--members 300 --months 16 --default-rate 0.2 --seed 7 "
    "--gbdt-trees 20 --max-epochs 2 --batch-size 64";

}  // namespace

TEST_CASE("help and usage errors exit as documented") {
  CHECK(run_cli("--help").code == 0);
  CHECK(contains(run_cli("--help").out, "riskseq"));
  CHECK(run_cli("synth --help").code == 0);

  CHECK(run_cli("").code == 2);                         // no subcommand
  CHECK(run_cli("frobnicate").code == 2);               // unknown subcommand
  CHECK(run_cli("synth").code == 2);                    // missing required --out
  CHECK(run_cli("synth --out x.jsonl --bogus 1").code == 2);
  CHECK(run_cli("serve-bench --calls 10").code == 2);   // missing --model/--artifacts

  auto kind = run_cli("train --train a --valid b --out c --kind gru");
  CHECK(kind.code == 2);
}

TEST_CASE("missing input files exit 2 and name the path") {
  const fs::path missing = scratch() / "no-such-portfolio.jsonl";
  const fs::path out = scratch() / "never-written.json";
  auto r = run_cli("prep --portfolio " + missing.string() + " --out " + out.string());
  CHECK(r.code == 2);
  CHECK(contains(r.err, missing.string()));
  CHECK(!fs::exists(out));

  auto e = run_cli("eval --ckpt " + (scratch() / "nope.ckpt.json").string() + " --data " +
                   (scratch() / "nope.bin").string());
  CHECK(e.code == 2);
  CHECK(contains(e.err, "nope.ckpt.json"));
}

TEST_CASE("config file handling: unknown keys, types, precedence") {
  const fs::path out = scratch() / "cfg-synth.jsonl";

  const fs::path bogus = scratch() / "bogus.json";
  write_text(bogus, R"({"bogus_key": 1})");
  auto r1 = run_cli("synth --config " + bogus.string() + " --out " + out.string());
  CHECK(r1.code == 2);
  CHECK(contains(r1.err, "unknown config key"));
  CHECK(contains(r1.err, "bogus_key"));

  const fs::path badtype = scratch() / "badtype.json";
  write_text(badtype, R"({"members": "lots"})");
  auto r2 = run_cli("synth --config " + badtype.string() + " --out " + out.string());
  CHECK(r2.code == 2);
  CHECK(contains(r2.err, "wrong type"));

  const fs::path notobj = scratch() / "notobj.json";
  write_text(notobj, "[1, 2]");
  CHECK(run_cli("synth --config " + notobj.string() + " --out " + out.string()).code == 2);

  const fs::path broken = scratch() / "broken.json";
  write_text(broken, "{{{");
  CHECK(run_cli("synth --config " + broken.string() + " --out " + out.string()).code == 2);

  CHECK(run_cli("synth --config " + (scratch() / "absent-config.json").string() + " --out " +
                out.string())
            .code == 2);

  // File values apply when no flag is given; flags win when both are present.
  const fs::path cfg = scratch() / "small.json";
  write_text(cfg, R"({"members": 120, "months": 16, "default_rate": 0.2, "seed": 9})");
  auto file_only = run_cli("synth --config " + cfg.string() + " --out " + out.string());
  REQUIRE(file_only.code == 0);
  CHECK(contains(file_only.out, "120 members"));
  CHECK(contains(first_line(file_only.out), "config "));
  CHECK(contains(first_line(file_only.out), " seed 9"));

  auto flag_wins = run_cli("synth --config " + cfg.string() + " --members 90 --seed 5 --out " +
                           out.string());
  REQUIRE(flag_wins.code == 0);
  CHECK(contains(flag_wins.out, "90 members"));
  CHECK(contains(first_line(flag_wins.out), " seed 5"));
}

TEST_CASE("synth output is deterministic per seed") {
  const fs::path a = scratch() / "det-a.jsonl";
  const fs::path b = scratch() / "det-b.jsonl";
  const fs::path c = scratch() / "det-c.jsonl";
  const std::string base = "synth --members 150 --months 16 --default-rate 0.1 ";
  REQUIRE(run_cli(base + "--seed 11 --out " + a.string()).code == 0);
  REQUIRE(run_cli(base + "--seed 11 --out " + b.string()).code == 0);
  REQUIRE(run_cli(base + "--seed 12 --out " + c.string()).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));

  const fs::path csv = scratch() / "det-a.csv";
  REQUIRE(run_cli(base + "--seed 11 --out " + a.string() + " --csv " + csv.string()).code == 0);
  CHECK(contains(first_line(slurp(csv)), "member_id"));
}

TEST_CASE("miniature pipeline: synth through eval and serving") {
  const fs::path dir = scratch();
  const std::string portfolio = (dir / "chain-portfolio.jsonl").string();
  const std::string artifacts = (dir / "chain-artifacts.json").string();
  const std::string gb_model = (dir / "chain-gbdt.json").string();
  const std::string gb_report = (dir / "chain-gbdt-report.json").string();
  const std::string ds_train = (dir / "chain-train.bin").string();
  const std::string ds_valid = (dir / "chain-valid.bin").string();
  const std::string ckpt = (dir / "chain-mlp.ckpt.json").string();
  const std::string log = (dir / "chain-train-log.csv").string();
  const std::string ev_report = (dir / "chain-eval.json").string();

  auto synth = run_cli("synth " + kTiny + " --out " + portfolio);
  REQUIRE(synth.code == 0);
  const std::string hash_line = first_line(synth.out);

  auto prep = run_cli("prep " + kTiny + " --portfolio " + portfolio + " --out " + artifacts);
  REQUIRE(prep.code == 0);
  // Same resolved config, same echoed hash.
  CHECK(first_line(prep.out) == hash_line);

  auto gb = run_cli("gbdt " + kTiny + " --portfolio " + portfolio + " --artifacts " + artifacts +
                    " --out " + gb_model + " --report " + gb_report);
  REQUIRE(gb.code == 0);
  json gbdoc = json::parse(slurp(gb_report));
  CHECK(gbdoc.at("format") == "riskseq-gbdt-eval");
  CHECK(gbdoc.at("valid").at("gini").is_number());
  CHECK(contains(hash_line, gbdoc.at("config_hash").get<std::string>()));

  auto sq = run_cli("seq " + kTiny + " --portfolio " + portfolio + " --artifacts " + artifacts +
                    " --out-train " + ds_train + " --out-valid " + ds_valid);
  REQUIRE(sq.code == 0);
  REQUIRE(fs::exists(ds_train));
  REQUIRE(fs::exists(ds_valid));

  auto tr = run_cli("train " + kTiny + " --train " + ds_train + " --valid " + ds_valid +
                    " --kind mlp --out " + ckpt + " --log " + log);
  REQUIRE(tr.code == 0);
  CHECK(first_line(slurp(log)) == "epoch,lr,train_loss,valid_gini");

  auto ev = run_cli("eval " + kTiny + " --ckpt " + ckpt + " --data " + ds_valid + " --report " +
                    ev_report);
  REQUIRE(ev.code == 0);
  json evdoc = json::parse(slurp(ev_report));
  CHECK(evdoc.at("model") == "mlp");
  CHECK(evdoc.at("overall").at("gini").is_number());
  CHECK(evdoc.at("overall").at("n").get<int>() > 0);
  CHECK(evdoc.contains("bins"));

  // Latency bench against the portfolio-backed store, plus snapshot roundtrip.
  const std::string lat_csv = (dir / "chain-latency.csv").string();
  const std::string store = (dir / "chain-store.jsonl").string();
  auto bench = run_cli("serve-bench " + kTiny + " --store-members 50 --model " + ckpt +
                       " --artifacts " + artifacts + " --portfolio " + portfolio +
                       " --calls 200 --out " + lat_csv + " --save-store " + store);
  REQUIRE(bench.code == 0);
  CHECK(contains(bench.out, "p50-under-10ms check: pass"));
  CHECK(first_line(slurp(lat_csv)) == "stage,p50_us,p95_us,p99_us,mean_us");

  auto reload = run_cli("serve-bench " + kTiny + " --model " + ckpt + " --artifacts " + artifacts +
                        " --store " + store + " --calls 100 --out " + lat_csv);
  CHECK(reload.code == 0);

  // Line-delimited scoring service on stdin: one good request, one malformed
  // line, one good request with a null (missing) numeric cell.
  json req;
  req["member_id"] = 4242;
  req["features"]["numeric"] = json::array();
  for (int f = 0; f < 20; ++f) req["features"]["numeric"].push_back(1.0 + 0.1 * f);
  req["features"]["categorical"] = {0, 1, 2, 0};
  req["features"]["ts"] = 15.5;
  json req2 = req;
  req2["features"]["numeric"][3] = nullptr;

  const fs::path req_path = dir / "chain-requests.jsonl";
  write_text(req_path, req.dump() + "\nnot json at all\n" + req2.dump() + "\n");
  auto svc = run_cli("serve-bench " + kTiny + " --model " + ckpt + " --artifacts " + artifacts +
                         " --service",
                     req_path.string());
  REQUIRE(svc.code == 0);
  CHECK(contains(svc.err, "served 2 requests"));

  std::istringstream lines(svc.out);
  std::string line;
  std::vector<json> replies;
  while (std::getline(lines, line)) {
    if (line.rfind("config ", 0) == 0) continue;  // hash echo precedes replies
    replies.push_back(json::parse(line));
  }
  REQUIRE(replies.size() == 3);
  CHECK(replies[0].contains("score"));
  CHECK(replies[0].contains("latency_us"));
  CHECK(replies[1].contains("error"));
  CHECK(replies[2].contains("score"));
}

TEST_CASE("sequence-length sweep smoke run writes report and table") {
  const std::string out = (scratch() / "fig6-smoke.json").string();
  const std::string csv = (scratch() / "fig6-smoke.csv").string();
  auto r = run_cli("sweep-seqlen --members 200 --months 16 --default-rate 0.2 "
                   "--gbdt-trees 10 --max-epochs 2 --batch-size 64 "
                   "--seeds 3 --lengths 12 --out " + out + " --csv " + csv);
  REQUIRE(r.code == 0);
  json doc = json::parse(slurp(out));
  CHECK(doc.at("format") == "riskseq-seqlen");
  const std::string table = slurp(csv);
  CHECK(first_line(table) == "seed,length,valid_gini");
  CHECK(contains(table, "\n3,12,"));
}
