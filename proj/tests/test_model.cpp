#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "levctl/config.hpp"
#include "levctl/model.hpp"

using namespace levctl;
using Catch::Approx;

TEST_CASE("mass from geometry matches the paper-sized silica sphere") {
  // 136 nm silica sphere at 2200 kg/m^3
  const double m = model::mass_from_geometry(136e-9, 2200.0);
  CHECK(m == Approx(2.90e-18).epsilon(0.005));
}

TEST_CASE("mass from geometry rejects degenerate input") {
  CHECK_THROWS_AS(model::mass_from_geometry(0.0, 2200.0), ConfigError);
  CHECK_THROWS_AS(model::mass_from_geometry(136e-9, 0.0), ConfigError);
  CHECK_THROWS_AS(model::mass_from_geometry(-1e-9, 2200.0), ConfigError);
}

TEST_CASE("mass scaling symmetry: (2r, rho) equals (r, 8 rho)") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> dia(20e-9, 500e-9), rho(500.0, 6000.0);
  for (int i = 0; i < 200; ++i) {
    const double d = dia(gen), r = rho(gen);
    CHECK(model::mass_from_geometry(2.0 * d, r) ==
          Approx(model::mass_from_geometry(d, 8.0 * r)).epsilon(1e-12));
  }
}

TEST_CASE("mass is monotone in both arguments") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> dia(20e-9, 500e-9), rho(500.0, 6000.0);
  for (int i = 0; i < 200; ++i) {
    const double d = dia(gen), r = rho(gen);
    CHECK(model::mass_from_geometry(d * 1.01, r) > model::mass_from_geometry(d, r));
    CHECK(model::mass_from_geometry(d, r * 1.01) > model::mass_from_geometry(d, r));
  }
}

TEST_CASE("ground state temperature of the y-mode is a few microkelvin") {
  const double t = model::ground_state_temperature(model::hz_to_angular(141e3));
  // hbar * 2 pi * 141 kHz / k_B
  CHECK(t == Approx(6.767e-6).epsilon(1e-3));
  CHECK(t > 6.5e-6);
  CHECK(t < 7.0e-6);
}

TEST_CASE("ground state temperature basics") {
  const double w = model::hz_to_angular(100e3);
  CHECK(model::ground_state_temperature(2.0 * w) ==
        Approx(2.0 * model::ground_state_temperature(w)).epsilon(1e-14));
  // omega = k_B / hbar gives exactly 1 K
  CHECK(model::ground_state_temperature(constants::k_boltzmann / constants::hbar) ==
        Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(model::ground_state_temperature(0.0), ConfigError);
  CHECK_THROWS_AS(model::ground_state_temperature(-1.0), ConfigError);
}

TEST_CASE("coupling rate A = phi0 * delta_omega") {
  model::TrapParams trap;
  trap.omega_x = model::hz_to_angular(115e3);
  trap.omega_y = model::hz_to_angular(141e3);
  CHECK(model::coupling_rate(0.0, trap) == 0.0);
  CHECK(model::coupling_rate(0.01, trap) == Approx(model::hz_to_angular(260.0)).epsilon(1e-12));
  CHECK(model::coupling_rate(-0.01, trap) == Approx(-model::coupling_rate(0.01, trap)).epsilon(1e-14));
}

TEST_CASE("unit round trip Hz <-> rad/s is exact to machine precision") {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> freq(1e-3, 1e9);
  for (int i = 0; i < 1000; ++i) {
    const double f = freq(gen);
    const double rt = model::angular_to_hz(model::hz_to_angular(f));
    CHECK(std::abs(rt - f) <= 4.0 * std::numeric_limits<double>::epsilon() * f);
  }
}

TEST_CASE("validate_config converts Hz-facing keys to angular frequencies") {
  const config::Config cfg = config::validate_config({{"trap.f_x_khz", "115"}});
  CHECK(cfg.trap.omega_x == Approx(2.0 * constants::pi * 115e3).epsilon(1e-15));
}

TEST_CASE("validate_config rejects a degenerate trap naming the field") {
  config::KeyValues kv{{"trap.f_x_khz", "120"}, {"trap.f_y_khz", "120"}};
  CHECK_THROWS_WITH(config::validate_config(kv),
                    Catch::Matchers::ContainsSubstring("trap.f_y_khz"));
}

TEST_CASE("validate_config applies defaults") {
  const config::Config cfg = config::validate_config({});
  CHECK(cfg.bath.temperature == 300.0);
  CHECK(cfg.particle.density == 2200.0);
  CHECK(cfg.trap.omega_y > cfg.trap.omega_x);
}

TEST_CASE("validate_config rejects unknown keys") {
  CHECK_THROWS_WITH(config::validate_config({{"trap.f_z_khz", "80"}}),
                    Catch::Matchers::ContainsSubstring("trap.f_z_khz"));
}

TEST_CASE("validate_config guards") {
  CHECK_THROWS_AS(config::validate_config({{"noise.sample_rate_mhz", "0.2"}}), ConfigError);
  CHECK_THROWS_AS(config::validate_config({{"drive.phi0_rad", "1.0"}}), ConfigError);
  CHECK_THROWS_AS(config::validate_config({{"feedback.eta_max", "0.5"}}), ConfigError);
  CHECK_THROWS_AS(config::validate_config({{"feedback.eta_max", "0"}}), ConfigError);
  CHECK_THROWS_AS(config::validate_config({{"sim.steps_per_period", "10"}}), ConfigError);
  CHECK_THROWS_AS(config::validate_config({{"bath.temperature_k", "-3"}}), ConfigError);
  CHECK_THROWS_AS(config::validate_config({{"trap.f_x_khz", "abc"}}), ConfigError);
}

TEST_CASE("validate_config is idempotent on its own serialization") {
  config::KeyValues raw{{"trap.f_x_khz", "115"},   {"trap.f_y_khz", "141"},
                        {"bath.gamma_hz", "0.7"},  {"drive.phi0_rad", "0.006"},
                        {"init.e_x_kbt", "1.5"},   {"init.e_y_kbt", "0.25"},
                        {"rng.seed", "42"}};
  const config::Config once = config::validate_config(raw);
  const config::KeyValues kv1 = config::to_key_values(once);
  const config::Config twice = config::validate_config(kv1);
  const config::KeyValues kv2 = config::to_key_values(twice);
  CHECK(kv1 == kv2);
  CHECK(config::config_hash(once) == config::config_hash(twice));
}

TEST_CASE("config hash is sensitive to values") {
  const config::Config a = config::validate_config({{"rng.seed", "1"}});
  const config::Config b = config::validate_config({{"rng.seed", "2"}});
  CHECK(config::config_hash(a) != config::config_hash(b));
}
