#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <unordered_map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ips {

using Site = std::int64_t;

enum class ArrivalKind : std::uint8_t { FertileArrow = 0, BlockingArrow = 1, Healing = 2 };

const char* to_string(ArrivalKind k);

struct ObjectKey {
    ArrivalKind kind = ArrivalKind::Healing;
    Site origin = 0;
    Site target = 0;

    static ObjectKey fertile(Site from, Site to) { return {ArrivalKind::FertileArrow, from, to}; }
    static ObjectKey blocking(Site from, Site to) { return {ArrivalKind::BlockingArrow, from, to}; }
    static ObjectKey healing(Site x) { return {ArrivalKind::Healing, x, x}; }

    /// Arrow keys connect nearest neighbours; healing keys sit on one site.
    bool valid() const;

    friend bool operator==(const ObjectKey&, const ObjectKey&) = default;
    friend auto operator<=>(const ObjectKey& a, const ObjectKey& b) = default;
};

struct ObjectKeyHash {
    std::size_t operator()(const ObjectKey& k) const noexcept;
};

struct InvalidParameter : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct OutOfHorizon : std::out_of_range {
    using std::out_of_range::out_of_range;
};

std::uint64_t mix64(std::uint64_t x);

/// Seed of the substream owned by `key` under `master_seed`.
std::uint64_t stream_seed(std::uint64_t master_seed, const ObjectKey& key);

/// Sequential generator of one keyed Poisson stream. The i-th gap depends
/// only on (stream seed, i), so any two cursors over the same key agree.
class StreamCursor {
public:
    StreamCursor() = default;
    StreamCursor(std::uint64_t seed, double rate, double horizon);
    /// Cursor over a fixed list of times (scripted logs).
    explicit StreamCursor(const std::vector<double>* fixed, std::size_t pos = 0);

    /// Next arrival time, or +inf once past the horizon (or for rate 0).
    double next();
    /// Advance until the pending arrival is strictly after `t`; returns it.
    double skip_through(double t);
    double peek() const { return pending_; }
    /// Pops the pending arrival and generates the following one.
    double pop();
    /// List-backed cursors only: make the first arrival after `t` pending.
    void reposition_after(double t);

private:
    double draw();

    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
    double inv_rate_ = 0.0;
    double horizon_ = 0.0;
    double clock_ = 0.0;
    double pending_ = 0.0;
    bool live_ = false;
    const std::vector<double>* fixed_ = nullptr;
};

/// Harris construction realised lazily from keyed Poisson streams.
class EventLog {
public:
    EventLog(std::uint64_t master_seed, double lambda, double p, double horizon);
    EventLog(EventLog&& other) noexcept;
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    /// Log whose streams are exactly `streams`; every other key is empty.
    /// Rates are still reported from (lambda, p) but do not generate arrivals.
    static EventLog scripted(double lambda, double p, double horizon,
                             const std::map<ObjectKey, std::vector<double>>& streams);
    bool is_scripted() const { return scripted_; }

    std::uint64_t master_seed() const { return seed_; }
    double lambda() const { return lambda_; }
    double p() const { return p_; }
    double horizon() const { return horizon_; }

    double rate(ArrivalKind k) const;
    StreamCursor cursor(const ObjectKey& key) const;
    /// Cursor over the cached stream whose pending arrival is the first one
    /// strictly after `t`.
    StreamCursor cursor_after(const ObjectKey& key, double t) const;

    /// Arrivals of `key` within [a, b], strictly increasing.
    std::vector<double> arrivals(const ObjectKey& key, double a, double b) const;
    /// Full realised stream over [0, horizon] (cached).
    const std::vector<double>& stream(const ObjectKey& key) const;
    /// First arrival strictly after `t` (or +inf).
    double first_after(const ObjectKey& key, double t) const;
    /// True iff the stream has an arrival in [a, b].
    bool any_in(const ObjectKey& key, double a, double b) const;

    /// Materialises every stream touching `site`.
    void extend_window(Site site) const;
    std::size_t realized_count() const;
    /// Snapshot of the cache, ordered by key.
    std::vector<std::pair<ObjectKey, std::vector<double>>> realized() const;

private:
    std::uint64_t seed_;
    double lambda_;
    double p_;
    double horizon_;
    bool scripted_ = false;
    mutable std::mutex mu_;
    mutable std::unordered_map<ObjectKey, std::vector<double>, ObjectKeyHash> cache_;
};

/// The log seen from time `start` onward: earlier arrivals are invisible.
class RestrictedView {
public:
    RestrictedView(const EventLog& base, double start);

    const EventLog& base() const { return *base_; }
    double start() const { return start_; }
    std::vector<double> arrivals(const ObjectKey& key, double a, double b) const;

private:
    const EventLog* base_;
    double start_;
};

EventLog build_event_log(std::uint64_t seed, double lambda, double p, double horizon);
RestrictedView restrict(const EventLog& log, double s);

/// JSON dump of realised streams: [{kind, origin, target, times}].
std::string dump_realized_json(const EventLog& log);

}  // namespace ips
