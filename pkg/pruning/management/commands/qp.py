from pruning.allocation import allocate, format_allocation, read_problem

from ._base import PruningCommand


class Command(PruningCommand):
    help = "Solve a standalone allocation problem file (N, then one 'q lb ub' line per cluster)."

    def add_command_arguments(self, parser):
        parser.add_argument('problem', help="Problem file path.")

    def handle(self, *args, **options):
        prob = read_problem(options['problem'])
        allocation = allocate(prob)
        text = format_allocation(allocation)
        if options.get('output'):
            out = self.output_dir(options)
            (out / 'allocation.txt').write_text(text)
            self.success(f"qp: k={prob.k} N={prob.N} lambda={allocation.lam:.9g} -> {out / 'allocation.txt'}")
        else:
            self.stdout.write(text, ending='')
