// Copyright 2026 The cebmv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// log I_v(x) reference values computed with mpmath.besseli at 50 significant digits.
#pragma once

namespace cebmv::test {

struct BesselRef {
  double order;
  double x;
  double log_value;
};

inline constexpr BesselRef kLogBesselTable[] = {
    {0.0, 1e-3, 2.4999998437500173611e-7},
    {0.0, 1, 0.23591435850717864869},
    {0.0, 10, 7.9429720831186955545},
    {0.0, 1e2, 96.779732689942583717},
    {0.0, 1e4, 9994.475903781432301},
    {1.0, 1e-3, -7.6009023345420849656},
    {1.0, 1, -0.57064798749083128142},
    {1.0, 10, 7.8902038341042122935},
    {1.0, 1e2, 96.774707457591448463},
    {1.0, 1e4, 9994.4758537789320718},
    {3.0, 1e-3, -24.594466785354302476},
    {3.0, 1, -3.8090863032394225},
    {3.0, 10, 7.4721486171486274998},
    {3.0, 1e2, 96.734508690490960592},
    {3.0, 1e4, 9994.4754537589332391},
    {7.0, 1e-3, -61.731478546609990885},
    {7.0, 1, -13.345995653624480248},
    {7.0, 10, 5.4723781669517725639},
    {7.0, 1e2, 96.533597175032079137},
    {7.0, 1e4, 9994.4734536590190997},
    {31.0, 1e-3, -313.72019979130736384},
    {31.0, 1, -99.571974575165503456},
    {31.0, 10, -27.427374064197923471},
    {31.0, 1e2, 91.988975079706840893},
    {31.0, 1e4, 9994.4278514171634661},
    {127.0, 1e-3, -1456.8680605831893384},
    {127.0, 1, -579.58118704419640993},
    {127.0, 10, -286.95966840529008013},
    {127.0, 1e2, 23.559676930161610736},
    {127.0, 1e4, 9993.6694242966513131},
    {511.0, 1e-3, -6563.8833038268246807},
    {511.0, 1, -3034.0198679864233049},
    {511.0, 10, -1857.3505479459571311},
    {511.0, 1e2, -675.91852719913484281},
    {511.0, 1e4, 9981.4220405436770329},
    {0.5, 2, 0.71600242968946804298},
    {31.0, 1024, 1019.1460159823953432},
    {15.0, 1, -38.280861264548743902},
    {15.0, 10, -2.2597987183547815924},
    {15.0, 100, 95.65120520059320883},
    {0, 16384, 16378.229038832503087},
    {15.0, 16384, 16378.22217216834323},
    {127, 16384, 16377.736808257621876},
    {255, 1e5, 99992.999473534855903},
    {0.5, 1e5, 99993.324598734310213},
};

// log C_n(kappa) for selected (n, kappa).
struct LogNormalizerRef {
  int dim;
  double kappa;
  double log_value;
};

inline constexpr LogNormalizerRef kLogNormalizerTable[] = {
    {64, 1024.0, -863.08245613391135271},
    {32, 1024.0, -944.93948866041160486},
    {32, 10.0, 7.3925420507159391157},
    {32, 16384.0, -16262.067297313304242},
    {8, 32.0, -26.163676048025288339},
    {8, 10.0, -7.915901603803872382},
    {256, 16384.0, -15380.569385722435338},
    {512, 16384.0, -14372.205707215918667},
    {2, 3.0, -3.4231846882227663991},
    {3, 1.0, -2.6924636085404864266},
};

// A_n(kappa) = I_{n/2}(kappa) / I_{n/2-1}(kappa) and log C_n(kappa), mpmath at 50 digits.
struct VmfRef {
  int dim;
  double kappa;
  double ratio;
  double log_normalizer;
};

inline constexpr VmfRef kVmfTable[] = {
    {2, 0.01, 0.0049999375010416488674, -1.8379020662530972197},
    {2, 1.0, 0.44638996589653450705, -2.0737914249165241323},
    {3, 5.0, 0.80009080398201937554, -5.2283937530148746198},
    {8, 10.0, 0.69751136723306428734, -7.915901603803872382},
    {16, 2.0, 0.12330606886026776842, -1.4499710107825566865},
    {32, 1024.0, 0.98497054944778499359, -944.93948866041160486},
    {64, 10.0, 0.15271190419708313607, 39.995445821914284201},
    {64, 1024.0, 0.96969674528999929739, -863.08245613391135271},
    {128, 16384.0, 0.99613166037496690176, -15884.376230013856271},
    {512, 100.0, 0.18840476401483570717, 858.37926545329057238},
    {1000, 3000.0, 0.8472434841576054994, 122.57305868572099697},
};

}  // namespace cebmv::test
