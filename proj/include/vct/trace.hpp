#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace vct {

// Records the discrete choices made during one forward pass (hard
// assignments, attention masks, matchings) and replays them on later passes.
// Replaying freezes every piecewise-constant decision at a base point, which
// turns the pipeline into a smooth function of its inputs there; finite
// differences of the replayed function equal the straight-through gradients.
class DiscreteTrace {
 public:
  enum class Mode { record, replay };

  DiscreteTrace() = default;

  Mode mode() const { return mode_; }
  bool replaying() const { return mode_ == Mode::replay; }

  // Switches to replay and rewinds to the first recorded site.
  void start_replay() {
    mode_ = Mode::replay;
    cursor_ = 0;
  }
  void rewind() { cursor_ = 0; }
  std::size_t sites() const { return entries_.size(); }

  void record(std::vector<std::int64_t> choices, std::vector<double> reals = {}) {
    if (mode_ != Mode::record) throw std::logic_error("DiscreteTrace: record while replaying");
    entries_.push_back({std::move(choices), std::move(reals)});
  }

  struct Entry {
    std::vector<std::int64_t> choices;
    std::vector<double> reals;
  };

  const Entry& next() {
    if (cursor_ >= entries_.size()) throw std::logic_error("DiscreteTrace: replay past end");
    return entries_[cursor_++];
  }

 private:
  Mode mode_ = Mode::record;
  std::vector<Entry> entries_;
  std::size_t cursor_ = 0;
};

}  // namespace vct
