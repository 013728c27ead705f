from lcaunet.config import parse_config

MICRO = dict(img_size=64, edge_channels=8, body_channels=8, heads=[1, 2, 2, 4], window=2,
             fusion_window=2, n_train=8, n_val=4, n_test=4, batch_size=4, epochs=2)


def micro_config(tmp_path, **kw):
    values = {**MICRO, "out_dir": str(tmp_path), **kw}
    return parse_config(overrides=values)
