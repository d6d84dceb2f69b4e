from scenarios import register_scenario
from scenarios.common import track_circle

register_scenario(__name__, name='circle_unit', title='Kreisbahn, Einzeleinheit')


def run(spec, seed):
    return track_circle('circle_unit', spec, seed, assembled=False)
