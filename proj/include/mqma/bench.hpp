#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqma/metrics.hpp"
#include "mqma/model.hpp"
#include "mqma/rng.hpp"

namespace mqma {

struct CostParams {
  int n = 1;    // questions per image
  int l_q = 1;  // tokens per question
  int l_c = 1;  // content length
  int l_a = 1;  // decoder positions per answer

  void validate() const {
    if (n < 1 || l_q < 1 || l_c < 1 || l_a < 1)
      throw std::invalid_argument("CostParams: all lengths must be >= 1");
  }
};

/// Cost unit = attention score-matrix entries per layer (q-k pairs); FFN and
/// constant factors excluded, matching the complexity model being tested.
struct CostReport {
  Strategy strategy = Strategy::kSqsa;
  CostParams params;
  std::uint64_t encoder_units = 0;  // per layer, per image
  std::uint64_t decoder_units = 0;  // per layer, self + cross, per image
  int seq_steps = 0;
  double encoder_ms = 0.0;  // medians; zero for analytic reports
  double decoder_ms = 0.0;
  double median_ms = 0.0;   // encoder_ms + decoder_ms
};

inline CostReport analytic_cost(const CostParams& p, Strategy strategy) {
  p.validate();
  const auto n = static_cast<std::uint64_t>(p.n);
  const auto lq = static_cast<std::uint64_t>(p.l_q);
  const auto lc = static_cast<std::uint64_t>(p.l_c);
  const auto la = static_cast<std::uint64_t>(p.l_a);
  CostReport r;
  r.strategy = strategy;
  r.params = p;
  switch (strategy) {
    case Strategy::kSqsa:
      r.encoder_units = n * (lq + lc) * (lq + lc);
      r.decoder_units = n * (la * la + la * (lq + lc));
      r.seq_steps = p.l_a;
      break;
    case Strategy::kNaiveConcat:
      r.encoder_units = (n * lq + lc) * (n * lq + lc);
      r.decoder_units = (n * la) * (n * la) + (n * la) * (n * lq + lc);
      r.seq_steps = p.n * p.l_a;
      break;
    case Strategy::kPromptParallel:
      r.encoder_units = (n * lq + lc) * (n * lq + lc);
      r.decoder_units = n * (la * la + la * (n * lq + lc));
      r.seq_steps = p.l_a;
      break;
  }
  return r;
}

struct BenchOptions {
  int repeats = 5;
  int warmup = 2;
  std::uint64_t input_seed = 42;
  bool measure_time = true;  // counts alone are much cheaper over big grids
};

namespace detail {

inline Mat random_embeddings(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, 0.5);
  return m;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

class Stopwatch {
 public:
  void start() { t0_ = std::chrono::steady_clock::now(); }
  double stop_ms() const {
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

struct DecodeStream {
  const Mat* enc = nullptr;
  Mat prefix;
  std::vector<int> tokens;
};

/// Lockstep greedy advance for exactly `steps` steps per stream, ignoring
/// [EOS]; mirrors the model's decode loop with a fixed step count so the
/// sequence lengths match the analytic accounting.
inline void run_decode(Model& model, std::vector<DecodeStream>& streams, int steps) {
  for (int s = 0; s < steps; ++s) {
    for (auto& st : streams) {
      const Eigen::RowVectorXd logits = model.decode_step(*st.enc, st.prefix);
      int best = 0;
      for (int i = 1; i < logits.size(); ++i)
        if (logits(i) > logits(best)) best = i;
      st.tokens.push_back(best);
      st.prefix.conservativeResize(st.prefix.rows() + 1, Eigen::NoChange);
      st.prefix.row(st.prefix.rows() - 1) = model.tables().token->value.row(best);
    }
  }
}

}  // namespace detail

/// Runs the instrumented model on synthetic inputs of the exact analytic
/// lengths. Instrumented attention-entry counts come from single-pass
/// processing of the decoded sequences (the accounting the analytic model
/// uses); wall time comes from the step-by-step greedy loop. The decoder
/// starts from one row per answer ([START] or the first prompt row), so
/// decoder sequence length equals l_a.
inline CostReport empirical_bench(Model& model, const CostParams& p, Strategy strategy,
                                  const BenchOptions& opt = {}) {
  p.validate();
  if (opt.repeats < 3) throw std::invalid_argument("empirical_bench: repeats must be >= 3");
  const auto& cfg = model.config();
  if (p.n > cfg.n_max || p.l_a > cfg.max_answer_len)
    throw std::invalid_argument("empirical_bench: params exceed model capacity");

  CostReport r;
  r.strategy = strategy;
  r.params = p;
  r.seq_steps = strategy == Strategy::kNaiveConcat ? p.n * p.l_a : p.l_a;

  Rng rng(opt.input_seed);
  const int d = cfg.d_emb;
  const int enc_len = strategy == Strategy::kSqsa ? p.l_q + p.l_c : p.n * p.l_q + p.l_c;
  const int enc_passes = strategy == Strategy::kSqsa ? p.n : 1;
  std::vector<Mat> enc_inputs;
  for (int i = 0; i < enc_passes; ++i)
    enc_inputs.push_back(detail::random_embeddings(enc_len, d, rng));

  auto run_encoder = [&]() {
    std::vector<Mat> states;
    states.reserve(enc_inputs.size());
    for (const auto& e : enc_inputs) states.push_back(model.encode_values(e));
    return states;
  };

  // Counting pass: encoder once per image.
  model.counter().reset();
  std::vector<Mat> enc_states = run_encoder();
  if (model.counter().encoder_self % static_cast<std::uint64_t>(cfg.n_layers_enc) != 0)
    throw std::logic_error("empirical_bench: encoder count not divisible by layer count");
  r.encoder_units = model.counter().encoder_self / static_cast<std::uint64_t>(cfg.n_layers_enc);

  // Build the decode streams: one per answer for SQSA / prompt-parallel
  // (SQSA answers its n questions as a batch, one per encoder pass), a
  // single concatenated stream for the naive variant.
  auto make_streams = [&]() {
    std::vector<detail::DecodeStream> streams;
    if (strategy == Strategy::kSqsa) {
      for (int i = 0; i < p.n; ++i) {
        detail::DecodeStream st;
        st.enc = &enc_states[static_cast<std::size_t>(i)];
        st.prefix = model.tables().token->value.row(Vocab::kStart);
        streams.push_back(std::move(st));
      }
    } else if (strategy == Strategy::kPromptParallel) {
      for (int i = 1; i <= p.n; ++i) {
        detail::DecodeStream st;
        st.enc = &enc_states[0];
        st.prefix = model.prompt_param(i).value.row(0);
        streams.push_back(std::move(st));
      }
    } else {
      detail::DecodeStream st;
      st.enc = &enc_states[0];
      st.prefix = model.tables().token->value.row(Vocab::kStart);
      streams.push_back(std::move(st));
    }
    return streams;
  };

  // Decode once, then count a teacher-forced pass over each final sequence.
  auto streams = make_streams();
  const int steps_per_stream =
      strategy == Strategy::kNaiveConcat ? p.n * p.l_a : p.l_a;
  detail::run_decode(model, streams, steps_per_stream);
  model.counter().reset();
  {
    Tape tape(false);
    for (auto& st : streams) {
      const auto rows = st.prefix.rows() - 1;  // last appended token is never processed
      NodeRef enc = tape.constant(*st.enc);
      model.decoder_forward(tape, enc, tape.constant(st.prefix.topRows(rows)));
    }
  }
  const auto dec_layers = static_cast<std::uint64_t>(cfg.n_layers_dec);
  const auto dec_total = model.counter().decoder_self + model.counter().decoder_cross;
  if (dec_total % dec_layers != 0)
    throw std::logic_error("empirical_bench: decoder count not divisible by layer count");
  r.decoder_units = dec_total / dec_layers;

  if (opt.measure_time) {
    std::vector<double> enc_ms, dec_ms;
    detail::Stopwatch sw;
    for (int rep = 0; rep < opt.warmup + opt.repeats; ++rep) {
      sw.start();
      enc_states = run_encoder();
      const double e = sw.stop_ms();
      auto timed_streams = make_streams();
      sw.start();
      detail::run_decode(model, timed_streams, steps_per_stream);
      const double dms = sw.stop_ms();
      if (rep >= opt.warmup) {
        enc_ms.push_back(e);
        dec_ms.push_back(dms);
      }
    }
    r.encoder_ms = detail::median(enc_ms);
    r.decoder_ms = detail::median(dec_ms);
    r.median_ms = r.encoder_ms + r.decoder_ms;
  }
  return r;
}

inline void write_bench_csv(const std::string& path, const std::vector<CostReport>& reports) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_bench_csv: cannot open " + path);
  f << "strategy,n,L_Q,L_C,L_A,encoder_units,decoder_units,seq_steps,median_ms\n";
  for (const auto& r : reports) {
    f << strategy_name(r.strategy) << ',' << r.params.n << ',' << r.params.l_q << ','
      << r.params.l_c << ',' << r.params.l_a << ',' << r.encoder_units << ',' << r.decoder_units
      << ',' << r.seq_steps << ',' << format_double(r.median_ms) << '\n';
  }
}

}  // namespace mqma
