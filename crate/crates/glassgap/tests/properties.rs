mod common;

macro_rules! property {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                let (_, check, cases) = common::ALL.iter().find(|p| p.0 == stringify!($name)).unwrap();
                check(*cases).unwrap();
            }
        )*
    };
}

property!(
    phi_bounds,
    martingale,
    ito_identity,
    measure_monotone,
    measure_lipschitz,
    rate_zero_at_support,
    bound_monotone,
    kernel_reversible,
    overlap_lipschitz,
    gt_sph_symmetric,
);
