// xcd: command-line front end for the cross-domain diagnosis pipeline.
//
//   xcd synth     --out corpus --seed 7
//   xcd pretrain  --corpus corpus --out run
//   xcd adapt     --corpus corpus --out run
//   xcd eval      --corpus corpus --out run
//   xcd recommend --corpus corpus --out run --student s00042
//
// Settings come from built-in defaults, then --config, then flags.
// Exit codes: 0 ok, 2 usage, 3 data, 4 numeric failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "xcd/xcd.hpp"

namespace {

struct Overrides {
    std::optional<std::string> config, corpus, out, checkpoint, target_domain, cdm, student;
    std::optional<std::uint64_t> seed;
    std::optional<int> peer_count, batch_size, epochs, x, dim, hidden1, hidden2;
    std::optional<double> early_bird_frac, lambda_adv, lr, adapt_lr;
    bool deterministic = false, no_oracle = false, frontier = false, allow_any_lr = false;
};

xcd::RunConfig resolve(const Overrides& o) {
    xcd::RunConfig c = o.config ? xcd::load_run_config(*o.config) : xcd::RunConfig{};
    if (o.corpus) c.corpus = *o.corpus;
    if (o.out) c.out = *o.out;
    if (o.checkpoint) c.checkpoint = *o.checkpoint;
    if (o.target_domain) c.target_domain = *o.target_domain;
    if (o.cdm) c.cdm = xcd::parse_cdm_kind(*o.cdm);
    if (o.seed) c.seed = *o.seed;
    if (o.peer_count) c.peer_count = *o.peer_count;
    if (o.batch_size) c.batch_size = *o.batch_size;
    if (o.epochs) c.pretrain_epochs = c.adapt_epochs = c.oracle_epochs = *o.epochs;
    if (o.x) c.x = *o.x;
    if (o.dim) c.dim = *o.dim;
    if (o.hidden1) c.hidden1 = *o.hidden1;
    if (o.hidden2) c.hidden2 = *o.hidden2;
    if (o.early_bird_frac) c.early_bird_fraction = *o.early_bird_frac;
    if (o.lambda_adv) c.lambda_adv = *o.lambda_adv;
    if (o.lr) c.lr = *o.lr;
    if (o.adapt_lr) c.adapt_lr = *o.adapt_lr;
    if (o.deterministic) c.deterministic = true;
    if (o.no_oracle) c.oracle = false;
    if (o.frontier) c.recommend_mode = xcd::RecommendMode::frontier;
    if (o.allow_any_lr) c.allow_any_lr = true;
    return c;
}

int run(CLI::App& app, const Overrides& o) {
    const xcd::RunConfig c = resolve(o);
    if (app.got_subcommand("synth")) {
        const auto res = xcd::cmd_synth(c);
        std::size_t logs = 0;
        for (const auto& d : res.datasets) logs += d.logs.size();
        std::printf("wrote %zu domains, %zu logs to %s\n", res.datasets.size(), logs, c.out.c_str());
    } else if (app.got_subcommand("pretrain")) {
        const auto ck = xcd::cmd_pretrain(c);
        const auto& s = ck.bundle.stats;
        std::printf("pretrained %zu source domains: %d epochs, best epoch %d, validation L_dec %.6f\n",
                    ck.bundle.source_domains.size(), s.epochs_run, s.best_epoch, s.best_validation_loss);
    } else if (app.got_subcommand("adapt")) {
        const auto out = xcd::cmd_adapt(c);
        const auto& r = out.result;
        std::printf("adapted %zu target students (%zu early birds), %zu simulated logs\n", r.states.size(),
                    r.split.early_bird_ids.size(), r.simulated.logs.size());
        if (!r.cold_start_stats.warning.empty()) std::fprintf(stderr, "warning: %s\n", r.cold_start_stats.warning.c_str());
    } else if (app.got_subcommand("eval")) {
        std::fputs(xcd::format_report_text(xcd::cmd_eval(c)).c_str(), stdout);
    } else if (app.got_subcommand("recommend")) {
        if (!o.student) throw xcd::UsageError("recommend needs --student");
        std::fputs(xcd::format_recommendations_text(xcd::cmd_recommend(c, *o.student)).c_str(), stdout);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain cognitive diagnosis for cold-start students", "xcd"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config, "JSON run configuration");
    app.add_option("--corpus", o.corpus, "corpus directory");
    app.add_option("--out", o.out, "output directory");
    app.add_option("--checkpoint", o.checkpoint, "checkpoint to read (default: under --out)");
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--target-domain", o.target_domain, "domain to treat as the cold-start target");
    app.add_option("--cdm", o.cdm, "diagnostic model")->check(CLI::IsMember({"irt", "mirt", "neuralcd"}));
    app.add_option("--peer-count", o.peer_count, "peers per early bird (p)");
    app.add_option("--early-bird-frac", o.early_bird_frac, "fraction of target students with real logs");
    app.add_option("--lambda-adv", o.lambda_adv, "weight of the adversarial decoupling terms");
    app.add_option("--lr", o.lr, "pretraining learning rate");
    app.add_option("--adapt-lr", o.adapt_lr, "fine-tuning learning rate");
    app.add_option("--batch-size", o.batch_size, "mini-batch size");
    app.add_option("--epochs", o.epochs, "epochs for every training stage");
    app.add_option("--dim", o.dim, "embedding dimension F");
    app.add_option("--hidden1", o.hidden1, "first hidden layer of the interaction net");
    app.add_option("--hidden2", o.hidden2, "second hidden layer of the interaction net");
    app.add_option("--x", o.x, "recommendation list length (even)");
    app.add_flag("--deterministic", o.deterministic, "single-threaded, bit-reproducible execution");
    app.add_flag("--no-oracle", o.no_oracle, "skip the oracle row in eval");
    app.add_flag("--frontier", o.frontier, "recommend questions closest to p = 0.5 instead of sampling");
    app.add_flag("--allow-any-lr", o.allow_any_lr, "accept learning rates outside the documented set");

    app.add_subcommand("synth", "generate a synthetic corpus with ground truth");
    app.add_subcommand("pretrain", "decoupled pretraining on the source domains");
    app.add_subcommand("adapt", "initialize, refine and simulate for the target domain");
    app.add_subcommand("eval", "score unseen students against random and oracle references");
    app.add_subcommand("recommend", "recommend questions for one target student")
        ->add_option("--student", o.student, "target student id");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        return run(app, o);
    } catch (const xcd::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const xcd::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const xcd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
