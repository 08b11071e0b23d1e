use depctl::harness::{preset, preset_names, ExperimentConfig, Kind};

#[test]
fn every_preset_round_trips_through_the_config_format() {
    let mut count = 0;
    for kind in Kind::ALL {
        for name in preset_names(kind) {
            let payload = preset(kind, name).unwrap_or_else(|| panic!("{} preset {name} is listed but missing", kind.name()));
            let by_name = ExperimentConfig::from_json(
                &format!(r#"{{"name":"{name}","kind":"{}","seed":7,"preset":"{name}"}}"#, kind.name()),
                None,
            )
            .unwrap();
            assert_eq!(by_name.payload, payload);

            // Canonical form parses back to the same experiment with the same hash.
            let text = by_name.to_value().to_string();
            let back = ExperimentConfig::from_json(&text, None).unwrap();
            assert_eq!(back, by_name);
            assert_eq!(back.hash(), by_name.hash());
            count += 1;
        }
    }
    assert!(count >= 20);
}

#[test]
fn documented_presets_exist() {
    for (kind, name) in [
        (Kind::ConditionChain, "rayleigh-2x2"),
        (Kind::Orders, "bias-counter-uniform"),
        (Kind::Orders, "sm-chain-gauss"),
        (Kind::ProductSum, "L2-1a"),
        (Kind::ProductSum, "L2-4b"),
        (Kind::Queue, "power-trade-neg"),
    ] {
        assert!(preset(kind, name).is_some(), "{name}");
        assert!(preset_names(kind).contains(&name));
    }
    assert!(preset(Kind::Sample, "L2-1a").is_none());
}
