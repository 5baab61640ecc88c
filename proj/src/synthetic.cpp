#include "fetfids/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string_view>
#include <vector>

#include "fetfids/data.hpp"
#include "fetfids/io.hpp"
#include "fetfids/rng.hpp"

namespace fetfids {

namespace {

struct Weighted {
  std::string_view name;
  double weight;
};

std::string_view pick(Rng& rng, std::initializer_list<Weighted> options) {
  double total = 0.0;
  for (const auto& o : options) total += o.weight;
  double u = rng.unit() * total;
  for (const auto& o : options) {
    if (u < o.weight) return o.name;
    u -= o.weight;
  }
  return options.begin()->name;
}

double normal(Rng& rng) {
  const double u1 = std::max(rng.unit(), 1e-300);
  const double u2 = rng.unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

double rate(Rng& rng, double mean, double spread) {
  return std::round(std::clamp(mean + spread * normal(rng), 0.0, 1.0) * 100.0) / 100.0;
}

double count(Rng& rng, double mean, double spread, double cap) {
  return std::round(std::clamp(mean + spread * normal(rng), 0.0, cap));
}

}  // namespace

std::string synthetic_nslkdd(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x5E7D}));
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string_view cls = pick(rng, {{"benign", 0.5346}, {"dos", 0.3646}, {"probe", 0.0925},
                                            {"r2l", 0.0079}, {"u2r", 0.0004}});
    RawRecord r;
    double serror = 0.0, rerror = 0.0, same_srv = 0.9, diff_srv = 0.05, cnt = 5, srv_cnt = 5, host_cnt = 150,
           host_srv = 200, bytes_src = 300, bytes_dst = 2000, logged = 1, hot = 0, dur = 0;
    if (cls == "benign") {
      r.label = "normal";
      r.categorical = {std::string(pick(rng, {{"tcp", 0.8}, {"udp", 0.15}, {"icmp", 0.05}})),
                       std::string(pick(rng, {{"http", 0.5}, {"smtp", 0.15}, {"ftp_data", 0.15}, {"domain_u", 0.1},
                                              {"private", 0.05}, {"other", 0.05}})),
                       std::string(pick(rng, {{"SF", 0.92}, {"REJ", 0.04}, {"S0", 0.02}, {"RSTO", 0.02}}))};
      dur = std::max(0.0, std::round(40.0 * normal(rng)));
    } else if (cls == "dos") {
      r.label = std::string(pick(rng, {{"neptune", 0.7}, {"smurf", 0.06}, {"back", 0.02}, {"teardrop", 0.02},
                                       {"pod", 0.005}, {"land", 0.001}}));
      const bool icmp = r.label == "smurf" || r.label == "pod";
      r.categorical = {icmp ? "icmp" : (r.label == "teardrop" ? "udp" : "tcp"),
                       std::string(icmp ? "ecr_i"
                                        : pick(rng, {{"private", 0.6}, {"http", 0.15}, {"other", 0.1},
                                                     {"telnet", 0.05}, {"ftp_data", 0.1}})),
                       std::string(pick(rng, {{"S0", 0.6}, {"SF", 0.2}, {"REJ", 0.15}, {"RSTO", 0.05}}))};
      serror = 0.75;
      same_srv = 0.1;
      diff_srv = 0.07;
      cnt = 180;
      srv_cnt = 12;
      host_cnt = 250;
      host_srv = 15;
      bytes_src = 0;
      bytes_dst = 0;
      logged = 0;
    } else if (cls == "probe") {
      r.label = std::string(pick(rng, {{"satan", 0.32}, {"ipsweep", 0.31}, {"portsweep", 0.25}, {"nmap", 0.12}}));
      r.categorical = {std::string(pick(rng, {{"tcp", 0.55}, {"icmp", 0.35}, {"udp", 0.1}})),
                       std::string(pick(rng, {{"eco_i", 0.35}, {"private", 0.35}, {"other", 0.2}, {"http", 0.1}})),
                       std::string(pick(rng, {{"REJ", 0.3}, {"SF", 0.4}, {"RSTR", 0.2}, {"S0", 0.1}}))};
      rerror = 0.5;
      same_srv = 0.3;
      diff_srv = 0.5;
      cnt = 20;
      srv_cnt = 3;
      host_cnt = 200;
      host_srv = 10;
      bytes_src = 10;
      bytes_dst = 5;
      logged = 0;
    } else if (cls == "r2l") {
      r.label = std::string(pick(rng, {{"warezclient", 0.6}, {"guess_passwd", 0.3}, {"imap", 0.05}, {"phf", 0.05}}));
      r.categorical = {"tcp", std::string(pick(rng, {{"ftp_data", 0.5}, {"telnet", 0.3}, {"ftp", 0.2}})), "SF"};
      hot = 3;
      dur = 300;
      bytes_src = 1000;
      bytes_dst = 500;
      cnt = 2;
      srv_cnt = 2;
    } else {
      r.label = std::string(pick(rng, {{"buffer_overflow", 0.6}, {"rootkit", 0.2}, {"loadmodule", 0.1}, {"perl", 0.1}}));
      r.categorical = {"tcp", std::string(pick(rng, {{"telnet", 0.7}, {"ftp_data", 0.3}})), "SF"};
      hot = 2;
      dur = 100;
      bytes_src = 1500;
      bytes_dst = 4000;
      cnt = 1;
      srv_cnt = 1;
    }

    auto& v = r.numeric;
    v[0] = std::max(0.0, std::round(dur * (0.5 + rng.unit())));
    v[4] = std::max(0.0, std::round(bytes_src * std::exp(0.8 * normal(rng))));
    v[5] = std::max(0.0, std::round(bytes_dst * std::exp(0.8 * normal(rng))));
    v[6] = r.label == "land" ? 1 : 0;
    v[7] = r.label == "teardrop" || r.label == "pod" ? 1 + rng.index(3) : 0;
    v[8] = 0;
    v[9] = count(rng, hot, 1.0, 30);
    v[10] = r.label == "guess_passwd" ? 1 : 0;
    v[11] = rng.unit() < 0.85 ? logged : 1 - logged;
    v[12] = count(rng, hot * 0.5, 0.5, 20);
    v[13] = cls == "u2r" && rng.unit() < 0.5 ? 1 : 0;
    v[14] = 0;
    v[15] = count(rng, cls == "u2r" ? 2 : 0, 0.3, 10);
    v[16] = count(rng, cls == "u2r" ? 1 : 0, 0.3, 10);
    v[17] = cls == "u2r" && rng.unit() < 0.3 ? 1 : 0;
    v[18] = count(rng, cls == "r2l" ? 1 : 0, 0.3, 5);
    v[19] = 0;
    v[20] = 0;
    v[21] = r.label == "warezclient" && rng.unit() < 0.5 ? 1 : 0;
    v[22] = count(rng, cnt, cnt * 0.3 + 3, 511);
    v[23] = count(rng, srv_cnt, srv_cnt * 0.3 + 2, 511);
    v[24] = rate(rng, serror, 0.2);
    v[25] = rate(rng, serror, 0.2);
    v[26] = rate(rng, rerror, 0.2);
    v[27] = rate(rng, rerror, 0.2);
    v[28] = rate(rng, same_srv, 0.2);
    v[29] = rate(rng, diff_srv, 0.1);
    v[30] = rate(rng, 0.1, 0.1);
    v[31] = count(rng, host_cnt, 60, 255);
    v[32] = count(rng, host_srv, 60, 255);
    v[33] = rate(rng, same_srv, 0.25);
    v[34] = rate(rng, diff_srv, 0.1);
    v[35] = rate(rng, cls == "probe" ? 0.5 : 0.1, 0.2);
    v[36] = rate(rng, 0.05, 0.05);
    v[37] = rate(rng, serror, 0.2);
    v[38] = rate(rng, serror, 0.2);
    v[39] = rate(rng, rerror, 0.2);
    v[40] = rate(rng, rerror, 0.2);
    r.difficulty = static_cast<int>(rng.index(22));
    out += format_record(r);
    out += '\n';
  }
  return out;
}

}  // namespace fetfids
