"""Smoke test for the nodalsep extension module.

Build first:  maturin develop -m crates/python/Cargo.toml --release
"""

import nodalsep as ns


def main():
    grid = ns.RadialGrid(2, 1024, 20.0)
    prof = ns.compute_c_infinity(grid, 2)
    print(f"c_inf(h=2) = {prof.c_value:.6f}  nodes = {prof.node_radii}")

    ens = ns.PulseEnsemble.from_profile(prof, [1, 2])
    m = ens.maximize(10.0)
    print(f"M_10 = {m['m_value']:.6f}  lambda_bar = {m['lambda_bar']}")

    cfg = ns.ExperimentConfig(h=2, sigma=[1, 2], n_points=1024, r_max=20.0,
                              beta_schedule=[10.0, 100.0, 1000.0])
    out = ns.sweep(cfg)
    for st in out["stages"]:
        rec = st.get("record")
        if rec is None:
            print(f"beta={st['beta']:g}  {st['error']}: {st['message']}")
        else:
            print(f"beta={st['beta']:g}  E={rec['energy']:.6f}  residual={rec['residual']:.2e}")
            assert rec["energy"] <= out["c_infinity"] + 1e-6
    try:
        ns.ExperimentConfig(h=2, sigma=[1, 1]).validate()
    except ValueError as err:
        print("rejected:", err)
    print("ok")


if __name__ == "__main__":
    main()
