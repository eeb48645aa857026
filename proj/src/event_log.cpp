#include "ips/event_log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace ips {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace

const char* to_string(ArrivalKind k) {
    switch (k) {
    case ArrivalKind::FertileArrow: return "FertileArrow";
    case ArrivalKind::BlockingArrow: return "BlockingArrow";
    case ArrivalKind::Healing: return "Healing";
    }
    return "?";
}

bool ObjectKey::valid() const {
    if (kind == ArrivalKind::Healing) return origin == target;
    return origin - target == 1 || target - origin == 1;
}

std::size_t ObjectKeyHash::operator()(const ObjectKey& k) const noexcept {
    return static_cast<std::size_t>(stream_seed(0, k));
}

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t stream_seed(std::uint64_t master_seed, const ObjectKey& key) {
    std::uint64_t h = mix64(master_seed + kGolden);
    h = mix64(h ^ (static_cast<std::uint64_t>(key.kind) + 1) * kGolden);
    h = mix64(h ^ static_cast<std::uint64_t>(key.origin) * 0xD6E8FEB86659FD93ULL);
    h = mix64(h ^ static_cast<std::uint64_t>(key.target) * 0xA0761D6478BD642FULL);
    return h;
}

StreamCursor::StreamCursor(std::uint64_t seed, double rate, double horizon)
    : seed_(seed), horizon_(horizon) {
    live_ = rate > 0.0;
    inv_rate_ = live_ ? 1.0 / rate : 0.0;
    pending_ = live_ ? next() : kInf;
}

StreamCursor::StreamCursor(const std::vector<double>* fixed, std::size_t pos) : fixed_(fixed) {
    counter_ = pos;
    live_ = true;
    pending_ = next();
}

double StreamCursor::draw() {
    ++counter_;
    const std::uint64_t bits = mix64(seed_ + counter_ * kGolden);
    // u in (0, 1) so every gap is strictly positive
    const double u = (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    return -std::log(u) * inv_rate_;
}

double StreamCursor::next() {
    if (!live_) return kInf;
    if (fixed_) {
        if (counter_ >= fixed_->size()) {
            live_ = false;
            return kInf;
        }
        return (*fixed_)[counter_++];
    }
    clock_ += draw();
    if (clock_ > horizon_) {
        live_ = false;
        return kInf;
    }
    return clock_;
}

double StreamCursor::pop() {
    const double t = pending_;
    pending_ = next();
    return t;
}

double StreamCursor::skip_through(double t) {
    while (pending_ <= t) pending_ = next();
    return pending_;
}

void StreamCursor::reposition_after(double t) {
    if (!fixed_) throw std::logic_error("reposition_after needs a list-backed cursor");
    // Wake-ups move forward in time, so gallop from the current position.
    const auto& v = *fixed_;
    std::size_t lo = counter_ > 0 ? counter_ - 1 : 0;
    if (lo < v.size() && v[lo] > t) lo = 0;
    std::size_t step = 1, hi = lo;
    while (hi < v.size() && v[hi] <= t) {
        lo = hi;
        hi += step;
        step *= 2;
    }
    counter_ = static_cast<std::size_t>(
        std::upper_bound(v.begin() + static_cast<std::ptrdiff_t>(lo),
                         v.begin() + static_cast<std::ptrdiff_t>(std::min(hi, v.size())), t) -
        v.begin());
    live_ = true;
    pending_ = next();
}

EventLog::EventLog(std::uint64_t master_seed, double lambda, double p, double horizon)
    : seed_(master_seed), lambda_(lambda), p_(p), horizon_(horizon) {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
        throw InvalidParameter("lambda must be positive and finite");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameter("p must lie in [0,1]");
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
        throw InvalidParameter("horizon must be finite and non-negative");
}

EventLog::EventLog(EventLog&& other) noexcept
    : seed_(other.seed_),
      lambda_(other.lambda_),
      p_(other.p_),
      horizon_(other.horizon_),
      scripted_(other.scripted_),
      cache_(std::move(other.cache_)) {}

double EventLog::rate(ArrivalKind k) const {
    switch (k) {
    case ArrivalKind::FertileArrow: return lambda_ * p_;
    case ArrivalKind::BlockingArrow: return lambda_ * (1.0 - p_);
    case ArrivalKind::Healing: return 1.0;
    }
    return 0.0;
}

EventLog EventLog::scripted(double lambda, double p, double horizon,
                           const std::map<ObjectKey, std::vector<double>>& streams) {
    EventLog log(0, lambda, p, horizon);
    log.scripted_ = true;
    for (const auto& [key, times] : streams) {
        if (!key.valid()) throw InvalidParameter("scripted stream with an invalid key");
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (times[i] < 0.0 || times[i] > horizon)
                throw InvalidParameter("scripted arrival outside [0, horizon]");
            if (i > 0 && !(times[i] > times[i - 1]))
                throw InvalidParameter("scripted arrivals must be strictly increasing");
        }
        log.cache_.emplace(key, times);
    }
    return log;
}

StreamCursor EventLog::cursor(const ObjectKey& key) const {
    if (scripted_) return StreamCursor(&stream(key));
    return StreamCursor(stream_seed(seed_, key), rate(key.kind), horizon_);
}

StreamCursor EventLog::cursor_after(const ObjectKey& key, double t) const {
    const auto& s = stream(key);
    const auto pos = std::upper_bound(s.begin(), s.end(), t) - s.begin();
    return StreamCursor(&s, static_cast<std::size_t>(pos));
}

const std::vector<double>& EventLog::stream(const ObjectKey& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    std::vector<double> times;
    if (scripted_) return cache_.emplace(key, std::move(times)).first->second;
    StreamCursor c = cursor(key);
    for (double t = c.pop(); t != kInf; t = c.pop()) times.push_back(t);
    return cache_.emplace(key, std::move(times)).first->second;
}

std::vector<double> EventLog::arrivals(const ObjectKey& key, double a, double b) const {
    if (b > horizon_) throw OutOfHorizon("query interval ends beyond the horizon");
    if (a < 0.0 || a > b) throw InvalidParameter("query interval must satisfy 0 <= a <= b");
    const auto& s = stream(key);
    auto lo = std::lower_bound(s.begin(), s.end(), a);
    auto hi = std::upper_bound(lo, s.end(), b);
    return {lo, hi};
}

double EventLog::first_after(const ObjectKey& key, double t) const {
    const auto& s = stream(key);
    auto it = std::upper_bound(s.begin(), s.end(), t);
    return it == s.end() ? kInf : *it;
}

bool EventLog::any_in(const ObjectKey& key, double a, double b) const {
    if (a > b) return false;
    const auto& s = stream(key);
    auto it = std::lower_bound(s.begin(), s.end(), a);
    return it != s.end() && *it <= b;
}

void EventLog::extend_window(Site site) const {
    stream(ObjectKey::healing(site));
    for (Site nb : {site - 1, site + 1}) {
        for (ArrivalKind k : {ArrivalKind::FertileArrow, ArrivalKind::BlockingArrow}) {
            stream({k, site, nb});
            stream({k, nb, site});
        }
    }
}

std::size_t EventLog::realized_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
}

std::vector<std::pair<ObjectKey, std::vector<double>>> EventLog::realized() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::pair<ObjectKey, std::vector<double>>> out(cache_.begin(), cache_.end());
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

RestrictedView::RestrictedView(const EventLog& base, double start) : base_(&base), start_(start) {
    if (start < 0.0) throw InvalidParameter("restriction time must be non-negative");
    if (start > base.horizon()) throw OutOfHorizon("restriction time beyond the horizon");
}

std::vector<double> RestrictedView::arrivals(const ObjectKey& key, double a, double b) const {
    if (b > base_->horizon()) throw OutOfHorizon("query interval ends beyond the horizon");
    const double lo = std::max(a, start_);
    if (lo > b) return {};
    return base_->arrivals(key, lo, b);
}

EventLog build_event_log(std::uint64_t seed, double lambda, double p, double horizon) {
    return EventLog(seed, lambda, p, horizon);
}

RestrictedView restrict(const EventLog& log, double s) { return RestrictedView(log, s); }

std::string dump_realized_json(const EventLog& log) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, times] : log.realized()) {
        out.push_back({{"kind", to_string(key.kind)},
                       {"origin", key.origin},
                       {"target", key.target},
                       {"times", times}});
    }
    return out.dump();
}

}  // namespace ips
