import numpy as np
import pytest

from ksns import chemotaxis as ch, config as cfgmod, diagnostics as diag, grid as g, harness
from ksns.errors import InvalidInputError


def small_cfg(**overrides):
    cfg = cfgmod.SimConfig()
    cfg.grid.nx = cfg.grid.ny = 16
    cfg.numerics.dt = 5e-3
    cfg.numerics.t_end = 0.05
    cfg.output.cadence = 2
    for path, value in overrides.items():
        section, key = path.split(".")
        setattr(getattr(cfg, section), key, value)
    return cfg


class TestBuilders:
    def test_gaussian_mass_is_exact(self):
        grid = g.GridSpec.l_shape(32, 32)
        n = harness.gaussian_density(grid, 0.3, 0.3, 0.1, 5.0)
        assert g.integrate_array(n, grid) == pytest.approx(5.0, rel=1e-13)

    def test_phi_linear(self):
        cfg = small_cfg()
        cfg.phi.form = "linear"
        cfg.phi.ax, cfg.phi.ay = 2.0, -1.0
        grid = harness.build_grid(cfg)
        phi = harness.build_phi(cfg, grid)
        gp = g.gradient(phi)
        assert np.allclose(gp.u1[1:-1, 1:-1], 2.0)
        assert np.allclose(gp.u2[1:-1, 1:-1], -1.0)


class TestRunSimulation:
    def test_stationary_records_constant(self):
        res = harness.run_simulation(small_cfg())
        assert res.termination == harness.COMPLETED
        first = res.records[0]
        for rec in res.records[1:]:
            assert rec.mass_n == pytest.approx(first.mass_n, abs=1e-13)
            assert rec.sup_n == pytest.approx(first.sup_n, abs=1e-10)
            assert rec.energy == pytest.approx(first.energy, abs=1e-10)
            assert rec.kinetic <= 1e-20

    def test_zero_initial_data(self):
        cfg = small_cfg()
        cfg.initial.n0 = 0.0
        cfg.initial.c0 = 0.0
        res = harness.run_simulation(cfg)
        assert res.termination == harness.COMPLETED
        for rec in res.records:
            assert rec.mass_n == 0.0 and rec.mass_c == 0.0 and rec.sup_n == 0.0

    def test_deterministic_csv_bytes(self):
        cfg = small_cfg()
        cfg.physics.kappa = 1.0
        cfg.physics.eps_reg = 1e-2
        cfg.phi.form = "linear"
        cfg.phi.ay = 0.1
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 2.0
        cfg.initial.width = 0.15
        a = harness.format_csv(harness.run_simulation(cfg).records)
        b = harness.format_csv(harness.run_simulation(cfg).records)
        assert a == b

    def test_full_mask_matches_rectangle_bytes(self):
        cfg = small_cfg()
        cfg.physics.kappa = 1.0
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 1.5
        cfg.initial.width = 0.2
        res_plain = harness.run_simulation(cfg)

        # same run with the mask given explicitly as the full rectangle
        grid_masked = g.GridSpec(16, 16, 1.0, 1.0, mask=np.ones((16, 16), dtype=bool))
        state = harness.build_initial_state(cfg, grid_masked)
        phi = harness.build_phi(cfg, grid_masked)
        from ksns import fluid as fl

        params = ch.ChemotaxisParams(harness.build_sensitivity(cfg),
                                     eps_reg=cfg.physics.eps_reg,
                                     cfl_safety=cfg.numerics.cfl_safety)
        fparams = fl.FluidParams(kappa=cfg.physics.kappa, eps_reg=cfg.physics.eps_reg, phi=phi,
                                 cfl_safety=cfg.numerics.cfl_safety)
        solver = harness.build_solver_config(cfg)
        recs = [diag.compute_record(state, cfg.physics.alpha)]
        ws = fl.FluidWorkspace()
        steps = int(round(cfg.numerics.t_end / cfg.numerics.dt))
        for k in range(steps):
            state = harness._advance(state, cfg.numerics.dt, params, fparams, solver, False, ws)
            if (k + 1) % cfg.output.cadence == 0 or k == steps - 1:
                recs.append(diag.compute_record(state, cfg.physics.alpha))
        assert harness.format_csv(recs) == harness.format_csv(res_plain.records)

    def test_l_shape_runs(self):
        cfg = small_cfg()
        cfg.grid.shape = cfgmod.L_SHAPE
        cfg.initial.kind = "gaussian"
        cfg.initial.center_x = 0.3
        cfg.initial.center_y = 0.3
        cfg.initial.width = 0.1
        cfg.initial.mass = 1.0
        res = harness.run_simulation(cfg)
        assert res.termination == harness.COMPLETED
        assert all(rec.min_n >= -1e-10 for rec in res.records)

    def test_detector_terminates_run(self):
        cfg = small_cfg()
        cfg.monitor.sup_n_max = 0.5  # below the stationary value 1.0
        res = harness.run_simulation(cfg)
        assert res.termination == harness.BLOWUP

    def test_nan_never_reports_completed(self, monkeypatch):
        cfg = small_cfg()
        calls = {"k": 0}
        real = ch.step_n

        def poisoned(state, params, dt, **kw):
            out = real(state, params, dt, **kw)
            calls["k"] += 1
            if calls["k"] == 3:
                bad = out.values.copy()
                bad[1, 1] = np.nan
                return g.ScalarField(out.grid, bad, bc=out.bc)
            return out

        monkeypatch.setattr(harness.chemo, "step_n", poisoned)
        res = harness.run_simulation(cfg)
        assert res.termination != harness.COMPLETED

    def test_fixed_dt_step_rejection_terminates(self):
        cfg = small_cfg()
        cfg.physics.c_s = 500.0  # drift CFL far below dt
        cfg.physics.alpha = 0.0
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 3.0
        cfg.initial.width = 0.1
        cfg.numerics.dt = 0.02
        cfg.numerics.t_end = 0.2
        cfg.numerics.adaptive = False
        res = harness.run_simulation(cfg)
        assert res.termination == harness.STEP_REJECTED_LIMIT

    def test_adaptive_recovers_from_rejection(self):
        cfg = small_cfg()
        cfg.physics.c_s = 20.0
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 3.0
        cfg.initial.width = 0.1
        cfg.numerics.dt = 0.02
        cfg.numerics.t_end = 0.1
        cfg.numerics.adaptive = True
        res = harness.run_simulation(cfg)
        assert res.termination == harness.COMPLETED

    def test_strang_flag_runs_and_conserves(self):
        cfg = small_cfg()
        cfg.numerics.strang = True
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 2.0
        cfg.initial.width = 0.15
        res = harness.run_simulation(cfg)
        assert res.termination == harness.COMPLETED
        m = res.record_array("mass_n")
        assert np.max(np.abs(m - m[0])) <= 1e-12 * m[0]


class TestFileFormats:
    def test_csv_header_exact(self):
        assert harness.CSV_HEADER == ("t,mass_n,mass_c,norm_n_1pa,grad_c_sq,energy,sup_n,"
                                      "sup_grad_c,kinetic,enstrophy,div_residual,min_n,min_c")

    def test_csv_row_count_and_parse(self, tmp_path):
        res = harness.run_simulation(small_cfg())
        path = tmp_path / "series.csv"
        harness.write_csv(res.records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == harness.CSV_HEADER
        assert len(lines) == len(res.records) + 1
        parsed = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        assert parsed.shape == (len(res.records), 13)
        assert np.allclose(parsed[:, 1], res.record_array("mass_n"))

    def test_snapshot_round_trip(self, tmp_path):
        cfg = small_cfg()
        res = harness.run_simulation(cfg)
        path = tmp_path / "snap.bin"
        harness.write_snapshot(path, res.final_state)
        raw = path.read_bytes()
        assert raw[:16] == b"KSNS-SNAPSHOT-v1"
        assert len(raw) == 16 + 16 + 5 * 8 * 16 * 16
        nx_ny = np.frombuffer(raw[16:32], dtype="<i8")
        assert tuple(nx_ny) == (16, 16)
        n, c, u1, u2, p = harness.read_snapshot(path)
        assert np.array_equal(n, res.final_state.n.values)
        assert np.array_equal(p, res.final_state.p.values)

    def test_snapshot_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(InvalidInputError):
            harness.read_snapshot(path)

    def test_initial_from_snapshot_file(self, tmp_path):
        cfg = small_cfg()
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 2.0
        cfg.initial.width = 0.2
        res = harness.run_simulation(cfg)
        path = tmp_path / "restart.bin"
        harness.write_snapshot(path, res.final_state)
        cfg2 = small_cfg()
        cfg2.initial.kind = "file"
        cfg2.initial.path = str(path)
        grid = harness.build_grid(cfg2)
        state = harness.build_initial_state(cfg2, grid)
        assert np.array_equal(state.n.values, res.final_state.n.values)


class TestAlphaSweep:
    def test_single_alpha_stationary(self):
        rows = harness.alpha_sweep(small_cfg(), [0.5])
        assert len(rows) == 1
        assert rows[0].termination == harness.COMPLETED
        assert rows[0].sup_sup_n == pytest.approx(1.0, abs=1e-9)

    def test_empty_list_rejected(self):
        with pytest.raises(InvalidInputError):
            harness.alpha_sweep(small_cfg(), [])

    def test_negative_alpha_rejected(self):
        with pytest.raises(InvalidInputError):
            harness.alpha_sweep(small_cfg(), [0.5, -0.1])

    def test_csv_shape(self):
        rows = harness.alpha_sweep(small_cfg(), [0.0, 0.5])
        text = harness.format_sweep_csv(rows)
        lines = text.strip().splitlines()
        assert lines[0].startswith("alpha,")
        assert len(lines) == 3


class TestRegularizationStudy:
    def test_single_eps_no_distance(self):
        rows = harness.regularization_study(small_cfg(), [1e-2])
        assert len(rows) == 1
        assert np.isnan(rows[0].dist_n)

    def test_distances_reported_and_zero_eps_allowed(self):
        cfg = small_cfg()
        cfg.physics.kappa = 1.0
        cfg.phi.form = "linear"
        cfg.phi.ay = 0.2
        cfg.initial.kind = "gaussian"
        cfg.initial.mass = 2.0
        cfg.initial.width = 0.2
        rows = harness.regularization_study(cfg, [1e-1, 1e-2, 0.0])
        assert len(rows) == 3
        assert all(r.termination == harness.COMPLETED for r in rows)
        assert np.isfinite(rows[1].dist_n) and np.isfinite(rows[2].dist_u)

    def test_non_decreasing_eps_rejected(self):
        with pytest.raises(InvalidInputError):
            harness.regularization_study(small_cfg(), [1e-3, 1e-2])


class TestConvergenceStudy:
    def test_requires_three_nested(self):
        with pytest.raises(InvalidInputError):
            harness.convergence_study(small_cfg(), [16, 32])
        with pytest.raises(InvalidInputError):
            harness.convergence_study(small_cfg(), [16, 16, 32])
        with pytest.raises(InvalidInputError):
            harness.convergence_study(small_cfg(), [16, 24, 32])

    def test_small_orders(self):
        orders = harness.convergence_study(small_cfg(), [8, 16, 32])
        assert orders["poisson"] > 1.5
        assert orders["helmholtz"] > 1.5
        assert orders["diffusion"] > 1.5
        assert orders["advection"] > 0.5
