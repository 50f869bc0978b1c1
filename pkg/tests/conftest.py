import numpy as np
import pytest


def write_csv(path, text):
    path.write_text(text.lstrip("\n"), encoding="utf-8")
    return path


@pytest.fixture
def csv_file(tmp_path):
    def make(text, name="data.csv"):
        return write_csv(tmp_path / name, text)

    return make


def random_psd(rng, n, scale=0.04):
    a = rng.normal(size=(n, n))
    cov = a @ a.T / n * scale + np.eye(n) * scale * 0.05
    return 0.5 * (cov + cov.T)
