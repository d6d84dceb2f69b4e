from scenarios import register_scenario
from scenarios.common import track_circle

register_scenario(__name__, name='circle_assembled', title='Kreisbahn, zusammengesetzt')


def run(spec, seed):
    return track_circle('circle_assembled', spec, seed, assembled=True)
