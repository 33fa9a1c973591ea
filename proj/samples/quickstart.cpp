// End-to-end tour: generate the confounded benchmark, train a plain baseline
// and an adversarial model, compare them on held-out systems, then probe what
// the latents still reveal about the data source. PC is the confounded
// aspect, so that row is where the two models should part ways. Takes about
// half a minute.

#include <cstdio>

#include "datqa/data.hpp"
#include "datqa/eval.hpp"
#include "datqa/train.hpp"

int main() {
    datqa::SyntheticConfig data_cfg;
    data_cfg.rho = 0.8;
    data_cfg.seed = 4;
    datqa::Corpus corpus = datqa::generate_synthetic(data_cfg);
    std::printf("corpus: %zu records, confound(PC) = %.3f\n", corpus.records.size(),
                datqa::measure_confound(corpus, 1));

    datqa::ModelConfig model;
    model.encoder_hidden = {128, 64};
    model.latent_dim = 32;
    model.domain_hidden = {64};
    model.dropout_rate = 0.1;
    model.seed = 4;

    datqa::TrainConfig base;
    base.epochs = 200;
    base.lr = 3e-3;
    base.weight_decay = 0.01;
    base.lambda = 0.0;
    base.strategy.kind = datqa::StrategyKind::Random;
    base.strategy.d = 2;
    base.seed = 4;
    base.strategy.seed = 4;

    datqa::TrainConfig dat = base;
    dat.lambda = 0.5;
    dat.lambda_warmup = true;
    dat.strategy.kind = datqa::StrategyKind::Source;

    std::printf("training baseline (lambda 0)...\n");
    std::fflush(stdout);
    datqa::Checkpoint ckpt_base = datqa::train(corpus, model, base);
    std::printf("training adversarial (lambda 0.5, source domains)...\n");
    std::fflush(stdout);
    datqa::Checkpoint ckpt_dat = datqa::train(corpus, model, dat);

    datqa::EvalReport rep_base = datqa::evaluate(ckpt_base, corpus);
    datqa::EvalReport rep_dat = datqa::evaluate(ckpt_dat, corpus);
    std::printf("\n%-8s %12s %12s\n", "aspect", "base srcc", "dat srcc");
    for (size_t a = 0; a < rep_base.aspects.size(); ++a)
        std::printf("%-8s %12.3f %12.3f\n", rep_base.aspects[a].aspect.c_str(),
                    rep_base.aspects[a].srcc, rep_dat.aspects[a].srcc);

    datqa::ProbeReport probe_base = datqa::probe_report(ckpt_base, corpus);
    datqa::ProbeReport probe_dat = datqa::probe_report(ckpt_dat, corpus);
    std::printf("\nsource probe accuracy: baseline %.1f%%, adversarial %.1f%%\n",
                probe_base.domain_acc, probe_dat.domain_acc);
    return 0;
}
