#include <map>
#include <unordered_map>

#include "emonet/error.hpp"
#include "emonet/train.hpp"
#include "parallel.hpp"

namespace emonet {

namespace {

std::unordered_map<std::string, const EcgRecord*> index_records(const std::vector<EcgRecord>& records) {
  std::unordered_map<std::string, const EcgRecord*> idx;
  for (const auto& r : records) idx.emplace(r.trial_id, &r);
  return idx;
}

std::filesystem::path cache_path(const std::filesystem::path& dir, const Window& w) {
  return dir / (w.trial_id + "@" + std::to_string(w.start_index) + ".nmoe");
}

}  // namespace

Matrix pooled_embedding(const EmbeddingStack& stack) {
  EmbeddingStack stored = stack;
  for (auto& v : stored.data) v = static_cast<double>(static_cast<float>(v));
  return pool_experts(stored);
}

std::vector<Window> make_windows(const std::vector<EcgRecord>& records,
                                 const std::vector<TrialRef>& trials,
                                 const PreprocessConfig& pre, double overlap_percent) {
  const auto idx = index_records(records);
  std::vector<Window> out;
  for (const auto& t : trials) {
    const auto it = idx.find(t.trial_id);
    if (it == idx.end()) fail(ErrorCode::InvalidArgument, "no record for trial " + t.trial_id);
    const EcgRecord clean = preprocess_record(*it->second, pre);
    const std::size_t n = window_length(pre, clean.fs);
    auto ws = segment_overlap(clean, n, stride_for_overlap(n, overlap_percent));
    out.insert(out.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
  }
  return out;
}

std::vector<EmbeddedWindow> embed_windows(const std::vector<Window>& windows,
                                          const BackboneParams& backbone, int threads,
                                          const std::optional<std::filesystem::path>& cache_dir) {
  if (cache_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*cache_dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create cache dir " + cache_dir->string());
  }
  const auto& cfg = backbone.config();
  std::vector<EmbeddedWindow> out(windows.size());
  detail::run_parallel(windows.size(), threads, [&](std::size_t i) {
    const Window& w = windows[i];
    EmbeddingStack stack;
    bool loaded = false;
    if (cache_dir) {
      const auto path = cache_path(*cache_dir, w);
      if (std::filesystem::exists(path)) {
        stack = load_stack(path);
        if (stack.experts != cfg.experts() || stack.dim != cfg.d || stack.frames != cfg.frames()) {
          fail(ErrorCode::ShapeMismatch, path.string() + ": cached stack does not match backbone");
        }
        loaded = true;
      }
    }
    if (!loaded) {
      stack = forward_all(backbone, w);
      if (cache_dir) save_stack(stack, cache_path(*cache_dir, w));
    }
    out[i] = {w.trial_id, w.label, w.start_index, pooled_embedding(stack)};
  });
  return out;
}

EmbeddedDataset embed_dataset(const std::vector<EcgRecord>& records, const SplitPlan& plan,
                              const PipelineConfig& pipe, const BackboneParams& backbone,
                              int threads, const std::optional<std::filesystem::path>& cache_dir) {
  const auto train_w = make_windows(records, plan.train, pipe.preprocess, pipe.overlap_percent);
  const auto train_eval_w =
      make_windows(records, plan.train, pipe.preprocess, pipe.eval_overlap_percent);
  const auto test_w = make_windows(records, plan.test, pipe.preprocess, pipe.eval_overlap_percent);

  // Evaluation-stride windows of train trials usually coincide with training
  // windows; embed each (trial, start) once.
  std::map<std::pair<std::string, std::size_t>, std::size_t> slot;
  std::vector<Window> unique;
  auto collect = [&](const std::vector<Window>& ws) {
    std::vector<std::size_t> ids;
    for (const auto& w : ws) {
      auto [it, inserted] = slot.try_emplace({w.trial_id, w.start_index}, unique.size());
      if (inserted) unique.push_back(w);
      ids.push_back(it->second);
    }
    return ids;
  };
  const auto train_ids = collect(train_w);
  const auto train_eval_ids = collect(train_eval_w);
  const auto test_ids = collect(test_w);

  const auto embedded = embed_windows(unique, backbone, threads, cache_dir);

  EmbeddedDataset data;
  data.plan = plan;
  data.experts = backbone.config().experts();
  data.dim = backbone.config().d;
  for (auto i : train_ids) data.train.push_back(embedded[i]);
  for (auto i : train_eval_ids) data.train_eval.push_back(embedded[i]);
  for (auto i : test_ids) data.test.push_back(embedded[i]);
  return data;
}

}  // namespace emonet
